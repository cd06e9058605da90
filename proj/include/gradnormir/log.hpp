#pragma once

#include <string>

#include "json.hpp"

namespace gradnormir::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

/// Level from GRADNORMIR_LOG ({error, info, debug}); info when unset.
Level threshold();

/// One JSON object per line on stderr: {"level", "event", ...fields}.
void emit(Level level, const std::string& event, nlohmann::json fields = nlohmann::json::object());

inline void info(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
    emit(Level::Info, event, std::move(fields));
}
inline void debug(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
    emit(Level::Debug, event, std::move(fields));
}
inline void error(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
    emit(Level::Error, event, std::move(fields));
}

}  // namespace gradnormir::log
