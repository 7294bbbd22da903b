#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace forgesem {

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

// Level comes from FORGESEM_LOG (error|warn|info|debug), default warn.
inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("FORGESEM_LOG");
        if (!env) return LogLevel::warn;
        const std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "warn") return LogLevel::warn;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return lvl;
}

inline void log_msg(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    const char* tag = lvl == LogLevel::error ? "error"
                      : lvl == LogLevel::warn ? "warn"
                      : lvl == LogLevel::info ? "info"
                                              : "debug";
    std::fprintf(stderr, "[forgesem %s] %s\n", tag, msg.c_str());
}

inline void log_error(const std::string& msg) { log_msg(LogLevel::error, msg); }
inline void log_warn(const std::string& msg) { log_msg(LogLevel::warn, msg); }
inline void log_info(const std::string& msg) { log_msg(LogLevel::info, msg); }
inline void log_debug(const std::string& msg) { log_msg(LogLevel::debug, msg); }

} // namespace forgesem
