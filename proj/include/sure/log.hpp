#pragma once

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace sure {

enum class LogLevel : int { Error = 0, Info = 1, Debug = 2 };

// Level comes from SURE_LOG={error,info,debug}; unset or unrecognized means info.
inline LogLevel log_level() {
    static const LogLevel lvl = [] {
        const char* env = std::getenv("SURE_LOG");
        if (!env) return LogLevel::Info;
        const std::string v(env);
        if (v == "error") return LogLevel::Error;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return lvl;
}

namespace detail {

inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

inline void log_line(const char* tag, const std::string& msg) {
    std::lock_guard<std::mutex> lock(log_mutex());
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace detail

inline void log_error(const std::string& msg) {
    detail::log_line("error", msg);
}

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) detail::log_line("info", msg);
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) detail::log_line("debug", msg);
}

}  // namespace sure
