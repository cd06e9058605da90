#include "gradnormir/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace gradnormir::log {

Level threshold() {
    const char* env = std::getenv("GRADNORMIR_LOG");
    if (!env) return Level::Info;
    const std::string v(env);
    if (v == "error") return Level::Error;
    if (v == "debug") return Level::Debug;
    return Level::Info;
}

void emit(Level level, const std::string& event, nlohmann::json fields) {
    if (static_cast<int>(level) > static_cast<int>(threshold())) return;
    static std::mutex mu;
    static const char* names[] = {"error", "info", "debug"};
    nlohmann::json line = {{"level", names[static_cast<int>(level)]}, {"event", event}};
    if (fields.is_object()) line.update(fields);
    const std::string text = line.dump();
    std::lock_guard lock(mu);
    std::cerr << text << '\n';
}

}  // namespace gradnormir::log
