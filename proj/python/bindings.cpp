#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gradnormir/detector.hpp"
#include "gradnormir/embedding_io.hpp"
#include "gradnormir/error.hpp"
#include "gradnormir/eval_harness.hpp"
#include "gradnormir/gradnorm.hpp"
#include "gradnormir/knn_index.hpp"
#include "gradnormir/pipeline.hpp"

namespace py = pybind11;
using namespace gradnormir;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vector> rows_of(const Matrix& m) {
    if (m.ndim() != 2) throw Error("expected a 2-D array");
    const auto r = m.unchecked<2>();
    std::vector<Vector> out(static_cast<std::size_t>(r.shape(0)));
    for (py::ssize_t i = 0; i < r.shape(0); ++i) out[static_cast<std::size_t>(i)].assign(r.data(i, 0), r.data(i, 0) + r.shape(1));
    return out;
}

Vector vec_of(const Matrix& m) {
    if (m.ndim() != 1) throw Error("expected a 1-D array");
    return Vector(m.data(), m.data() + m.shape(0));
}

Matrix matrix_of(const EmbeddingSet& set) {
    const auto n = static_cast<py::ssize_t>(set.records.size());
    const auto d = static_cast<py::ssize_t>(set.header.dimension);
    Matrix out({n, d});
    auto w = out.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < n; ++i)
        for (py::ssize_t j = 0; j < d; ++j) w(i, j) = set.records[static_cast<std::size_t>(i)].pooled[static_cast<std::size_t>(j)];
    return out;
}

EmbeddingSet set_of(const std::vector<std::string>& ids, const Matrix& vectors, const std::string& retriever_id) {
    const auto rows = rows_of(vectors);
    if (rows.size() != ids.size()) throw Error("ids and vectors differ in length");
    EmbeddingSet set;
    set.header.retriever_id = retriever_id;
    set.header.dimension = static_cast<std::uint32_t>(vectors.shape(1));
    set.header.pooling = Pooling::PrePooled;
    set.header.record_count = ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i)
        set.records.push_back({ids[i], std::vector<float>(rows[i].begin(), rows[i].end()), std::nullopt});
    return set;
}

PipelineConfig scoring_config(const py::dict& settings) {
    PipelineConfig c;
    for (const auto& [k, v] : settings) set_config_value(c, py::str(k), py::str(v));
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_gradnormir, m) {
    m.doc() = "GradNormIR core: embedding I/O, exact cosine search, gradient-norm scoring and detection";
    m.attr("__version__") = kToolVersion;

    static py::exception<Error> error(m, "GradNormIRError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error, e.what());
        }
    });

    m.def("load_embeddings",
          [](const std::filesystem::path& path) {
              const auto set = load_embeddings(path);
              std::vector<std::string> ids;
              for (const auto& r : set.records) ids.push_back(r.doc_id);
              return py::make_tuple(ids, matrix_of(set), set.header.retriever_id);
          },
          py::arg("path"), "Read a binary or JSONL embedding file. Returns (ids, pooled matrix, retriever_id).");

    m.def("write_embeddings",
          [](const std::filesystem::path& path, const std::vector<std::string>& ids, const Matrix& vectors,
             const std::string& retriever_id) {
              const auto set = set_of(ids, vectors, retriever_id);
              write_embedding_set(set.header, set.records, path);
          },
          py::arg("path"), py::arg("ids"), py::arg("vectors"), py::arg("retriever_id") = "",
          "Write pre-pooled embeddings in the binary format.");

    py::class_<CosineIndex>(m, "CosineIndex")
        .def(py::init([](std::vector<std::string> ids, const Matrix& vectors, std::string retriever_id) {
                 return CosineIndex(std::move(ids), rows_of(vectors), std::move(retriever_id));
             }),
             py::arg("ids"), py::arg("vectors"), py::arg("retriever_id") = "")
        .def("search",
             [](const CosineIndex& index, const Matrix& query, std::size_t k, const std::vector<std::string>& exclude) {
                 std::vector<std::pair<std::string, double>> out;
                 const std::unordered_set<std::string> ex(exclude.begin(), exclude.end());
                 for (const auto& n : index.search(vec_of(query), k, ex)) out.emplace_back(n.doc_id, n.similarity);
                 return out;
             },
             py::arg("query"), py::arg("k"), py::arg("exclude") = std::vector<std::string>{},
             "Top-k (doc_id, cosine) pairs, similarity descending, ties by doc_id.")
        .def("__len__", &CosineIndex::size)
        .def_property_readonly("dimension", &CosineIndex::dimension)
        .def_property_readonly("retriever_id", &CosineIndex::retriever_id);

    m.def("infonce_loss",
          [](const Matrix& q, const Matrix& pos, const Matrix& negs, double temperature) {
              const auto ns = negs.size() == 0 ? std::vector<Vector>{} : rows_of(negs);
              const std::vector<VectorView> views(ns.begin(), ns.end());
              return infonce_loss(vec_of(q), vec_of(pos), views, temperature);
          },
          py::arg("query"), py::arg("positive"), py::arg("negatives"), py::arg("temperature") = 0.05);

    m.def("grad_norm",
          [](const Matrix& q, const Matrix& pos, const Matrix& negs, double temperature, const std::string& surface) {
              const auto ns = negs.size() == 0 ? std::vector<Vector>{} : rows_of(negs);
              const std::vector<VectorView> views(ns.begin(), ns.end());
              return grad_norm(vec_of(q), vec_of(pos), views, {temperature, parse_grad_surface(surface)});
          },
          py::arg("query"), py::arg("positive"), py::arg("negatives"), py::arg("temperature") = 0.05,
          py::arg("surface") = "virtual-projection");

    m.def("score_corpus",
          [](const std::vector<std::string>& ids, const Matrix& vectors, const py::dict& settings) {
              const PipelineConfig c = scoring_config(settings);
              const auto set = set_of(ids, vectors, "");
              const auto index = build_index(set);
              const auto chosen = subsample_corpus(ids, c.sampler.subsample_fraction,
                                                   derive_seed(c.global_seed, "corpus-subsample", 0));
              std::vector<std::size_t> positions;
              for (const auto& id : chosen) positions.push_back(index.find(id));
              std::vector<GradNormScore> scores;
              {
                  py::gil_scoped_release release;
                  scores = score_documents(set, index, positions, c);
              }
              py::dict out;
              for (const auto& s : scores) out[py::str(s.doc_id)] = s.score;
              return out;
          },
          py::arg("ids"), py::arg("vectors"), py::arg("settings") = py::dict(),
          "GradNormIR score per document. `settings` takes the same keys as the config file.");

    m.def("config_digest",
          [](const py::dict& settings) { return scoring_config(settings).config_digest(); },
          py::arg("settings") = py::dict());

    m.def("threshold",
          [](const std::vector<double>& reference_scores, const std::string& statistic) {
              return reference_statistic(reference_scores, parse_statistic(statistic));
          },
          py::arg("reference_scores"), py::arg("statistic") = "mean");

    m.def("corpus_report",
          [](const std::map<std::string, double>& scores, double threshold, double gamma) {
              DocFlags flags;
              for (const auto& [id, s] : scores) flags[id] = s > threshold;
              const auto r = corpus_report(flags, gamma);
              py::dict out;
              out["ratio"] = r.ratio;
              out["is_ood"] = r.is_ood;
              out["ood_docs"] = r.ood_docs;
              out["total_docs"] = r.total_docs;
              out["flags"] = r.per_doc_flags;
              return out;
          },
          py::arg("scores"), py::arg("threshold"), py::arg("gamma") = 0.5);

    m.def("select_retriever",
          [](const std::map<std::string, std::pair<double, double>>& ratio_and_mean) {
              std::vector<CorpusReport> reports;
              for (const auto& [id, rm] : ratio_and_mean) {
                  CorpusReport r;
                  r.retriever_id = id;
                  r.ratio = rm.first;
                  r.mean_score = rm.second;
                  reports.push_back(r);
              }
              std::vector<std::string> order;
              for (const auto& r : select_retriever(reports)) order.push_back(r.retriever_id);
              return order;
          },
          py::arg("ratio_and_mean"), "Retriever ids ranked best first from {id: (ratio, mean_score)}.");

    m.def("recall_at_k",
          [](const std::map<std::string, std::vector<std::string>>& retrieved,
             const std::map<std::string, std::vector<std::string>>& relevant, std::size_t k) {
              RetrievalRun run;
              run.cutoff = k;
              for (const auto& [q, docs] : retrieved)
                  for (const auto& d : docs) run.results[q].push_back({d, 0.0});
              Qrels qrels;
              for (const auto& [q, docs] : relevant)
                  for (const auto& d : docs) qrels.add(q, d, 1);
              return recall_at_k(run, qrels, k).recall;
          },
          py::arg("retrieved"), py::arg("relevant"), py::arg("k") = 100);
}
