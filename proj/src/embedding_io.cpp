#include "gradnormir/embedding_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "json.hpp"

#include "gradnormir/atomic_file.hpp"
#include "gradnormir/error.hpp"

namespace gradnormir {

namespace {

constexpr char kMagic[4] = {'G', 'N', 'E', '1'};

static_assert(std::numeric_limits<float>::is_iec559, "f32 must be IEEE-754 binary32");

// Little-endian encoding, independent of host byte order.
template <typename T>
void put_le(std::string& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

void put_string16(std::string& out, const std::string& s, const char* what) {
    if (s.size() > std::numeric_limits<std::uint16_t>::max())
        throw Error(std::string(what) + " longer than 65535 bytes");
    put_le(out, static_cast<std::uint16_t>(s.size()));
    out.append(s);
}

template <typename T>
bool get_le(std::istream& in, T& value) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
    value = static_cast<T>(u);
    return true;
}

bool get_f32s(std::istream& in, std::span<float> out) {
    std::vector<unsigned char> buf(out.size() * 4);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        return false;
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = std::uint32_t(buf[4 * i]) | (std::uint32_t(buf[4 * i + 1]) << 8) |
                          (std::uint32_t(buf[4 * i + 2]) << 16) | (std::uint32_t(buf[4 * i + 3]) << 24);
        out[i] = std::bit_cast<float>(u);
    }
    return true;
}

bool get_string16(std::istream& in, std::string& s) {
    std::uint16_t len = 0;
    if (!get_le(in, len)) return false;
    s.assign(len, '\0');
    return len == 0 || static_cast<bool>(in.read(s.data(), len));
}

bool finite(std::span<const float> v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::Mean: return "mean";
        case Pooling::Cls: return "cls";
        case Pooling::PrePooled: return "pre-pooled";
    }
    throw Error("unknown pooling code");
}

Pooling parse_pooling(const std::string& s) {
    if (s == "mean") return Pooling::Mean;
    if (s == "cls") return Pooling::Cls;
    if (s == "pre-pooled") return Pooling::PrePooled;
    throw Error("unknown pooling '" + s + "'");
}

TokenMatrix TokenMatrix::from_rows(const std::vector<std::vector<float>>& rows) {
    TokenMatrix m;
    m.rows = rows.size();
    m.cols = rows.empty() ? 0 : rows.front().size();
    m.values.reserve(m.rows * m.cols);
    for (const auto& r : rows) {
        if (r.size() != m.cols) throw Error("ragged token states");
        m.values.insert(m.values.end(), r.begin(), r.end());
    }
    return m;
}

void EmbeddingSetHeader::validate() const {
    if (dimension < 1) throw Error("dimension must be >= 1");
    if (pooling == Pooling::PrePooled && has_token_states)
        throw Error("pre-pooled sets cannot carry token states");
    if (static_cast<std::uint16_t>(pooling) > 2) throw Error("unknown pooling code");
}

Vector pool(const TokenMatrix& token_states, Pooling method) {
    if (token_states.empty()) throw Error("empty token states");
    const std::size_t d = token_states.cols;
    switch (method) {
        case Pooling::Mean: {
            Vector out(d, 0.0);
            for (std::size_t t = 0; t < token_states.rows; ++t) {
                auto r = token_states.row(t);
                for (std::size_t j = 0; j < d; ++j) out[j] += r[j];
            }
            const double inv = 1.0 / static_cast<double>(token_states.rows);
            for (double& x : out) x *= inv;
            return out;
        }
        case Pooling::Cls: {
            auto r = token_states.row(0);
            return Vector(r.begin(), r.end());
        }
        case Pooling::PrePooled: break;
    }
    throw Error("pooling method must be mean or cls");
}

void validate_record(const EmbeddingSetHeader& header, const DocumentEmbedding& doc) {
    if (doc.pooled.size() != header.dimension)
        throw Error("dimension mismatch for doc_id '" + doc.doc_id + "': expected " +
                    std::to_string(header.dimension) + ", got " + std::to_string(doc.pooled.size()));
    if (!finite(doc.pooled)) throw Error("non-finite coordinate in doc_id '" + doc.doc_id + "'");
    if (header.has_token_states != doc.token_states.has_value())
        throw Error("token states presence differs from header for doc_id '" + doc.doc_id + "'");
    if (!doc.token_states) return;
    const auto& ts = *doc.token_states;
    if (ts.rows < 1) throw Error("empty token states for doc_id '" + doc.doc_id + "'");
    if (ts.cols != header.dimension || ts.values.size() != ts.rows * ts.cols)
        throw Error("token state dimension mismatch for doc_id '" + doc.doc_id + "'");
    if (!finite(ts.values)) throw Error("non-finite coordinate in doc_id '" + doc.doc_id + "'");
    if (header.pooling == Pooling::Mean) {
        const Vector mean = pool(ts, Pooling::Mean);
        double diff = 0.0, ref = 0.0;
        for (std::size_t j = 0; j < mean.size(); ++j) {
            const double e = static_cast<double>(doc.pooled[j]) - mean[j];
            diff += e * e;
            ref += mean[j] * mean[j];
        }
        if (std::sqrt(diff) > 1e-5 * std::sqrt(ref))
            throw Error("pooled vector is not the mean of token states for doc_id '" + doc.doc_id + "'");
    }
}

EmbeddingSetReader::EmbeddingSetReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open embedding file " + path.string());
    char magic[4];
    if (!in_.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("magic mismatch in " + path.string());
    std::uint16_t pooling = 0;
    std::uint8_t has_tokens = 0;
    if (!get_le(in_, header_.format_version) || !get_le(in_, pooling) ||
        !get_le(in_, header_.dimension) || !get_le(in_, header_.record_count) ||
        !get_le(in_, has_tokens) || !get_string16(in_, header_.retriever_id))
        throw Error("truncated header in " + path.string());
    if (header_.format_version != EmbeddingSetHeader::kFormatVersion)
        throw Error("unsupported format version " + std::to_string(header_.format_version));
    if (pooling > 2) throw Error("unknown pooling code " + std::to_string(pooling));
    if (has_tokens > 1) throw Error("invalid has_token_states byte");
    header_.pooling = static_cast<Pooling>(pooling);
    header_.has_token_states = has_tokens != 0;
    header_.validate();
}

std::optional<DocumentEmbedding> EmbeddingSetReader::next() {
    if (index_ == header_.record_count) {
        if (in_.peek() != std::char_traits<char>::eof())
            throw Error("trailing bytes after " + std::to_string(index_) + " records in " + path_.string());
        return std::nullopt;
    }
    const auto truncated = [&] {
        return Error("truncated record at index " + std::to_string(index_));
    };
    DocumentEmbedding doc;
    if (!get_string16(in_, doc.doc_id)) throw truncated();
    const std::size_t d = header_.dimension;
    if (header_.has_token_states) {
        std::uint32_t t = 0;
        if (!get_le(in_, t)) throw truncated();
        if (t == 0) throw Error("empty token states at index " + std::to_string(index_));
        TokenMatrix m(t, d);
        if (!get_f32s(in_, m.values)) throw truncated();
        doc.token_states = std::move(m);
    }
    doc.pooled.resize(d);
    if (!get_f32s(in_, doc.pooled)) throw truncated();
    validate_record(header_, doc);
    if (!seen_.insert(doc.doc_id).second) throw Error("duplicate doc_id '" + doc.doc_id + "'");
    ++index_;
    return doc;
}

EmbeddingSet read_embedding_set(const std::filesystem::path& path) {
    EmbeddingSetReader reader(path);
    EmbeddingSet set{reader.header(), {}};
    set.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(reader.header().record_count, 1u << 20)));
    while (auto doc = reader.next()) set.records.push_back(std::move(*doc));
    return set;
}

void write_embedding_set(const EmbeddingSetHeader& header, std::span<const DocumentEmbedding> records,
                         const std::filesystem::path& path) {
    header.validate();
    if (header.record_count != records.size())
        throw Error("record count mismatch: header says " + std::to_string(header.record_count) +
                    ", got " + std::to_string(records.size()));
    std::string out(kMagic, 4);
    put_le(out, header.format_version);
    put_le(out, static_cast<std::uint16_t>(header.pooling));
    put_le(out, header.dimension);
    put_le(out, header.record_count);
    put_le(out, static_cast<std::uint8_t>(header.has_token_states ? 1 : 0));
    put_string16(out, header.retriever_id, "retriever_id");

    std::unordered_set<std::string> seen;
    for (const auto& doc : records) {
        validate_record(header, doc);
        if (!seen.insert(doc.doc_id).second) throw Error("duplicate doc_id '" + doc.doc_id + "'");
        put_string16(out, doc.doc_id, "doc_id");
        if (header.has_token_states) {
            put_le(out, static_cast<std::uint32_t>(doc.token_states->rows));
            for (float f : doc.token_states->values) put_f32(out, f);
        }
        for (float f : doc.pooled) put_f32(out, f);
    }
    write_file_atomic(path, out);
}

EmbeddingSet read_jsonl_embeddings(const std::filesystem::path& path, const std::string& retriever_id) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    EmbeddingSet set;
    set.header.retriever_id = retriever_id;
    set.header.pooling = Pooling::PrePooled;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(where + ": " + e.what());
        }
        if (!j.contains("_id") || !j.contains("embedding") || !j["embedding"].is_array())
            throw Error(where + ": expected {\"_id\", \"embedding\"}");
        DocumentEmbedding doc;
        doc.doc_id = j["_id"].get<std::string>();
        for (const auto& x : j["embedding"]) {
            if (!x.is_number()) throw Error(where + ": non-numeric coordinate");
            doc.pooled.push_back(x.get<float>());
        }
        if (set.header.dimension == 0) {
            if (doc.pooled.empty()) throw Error(where + ": empty embedding");
            set.header.dimension = static_cast<std::uint32_t>(doc.pooled.size());
        }
        try {
            validate_record(set.header, doc);
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
        if (!seen.insert(doc.doc_id).second) throw Error(where + ": duplicate doc_id '" + doc.doc_id + "'");
        set.records.push_back(std::move(doc));
    }
    if (set.header.dimension == 0) set.header.dimension = 1;
    set.header.record_count = set.records.size();
    return set;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open embedding file " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0) return read_embedding_set(path);
    return read_jsonl_embeddings(path, path.stem().string());
}

}  // namespace gradnormir
