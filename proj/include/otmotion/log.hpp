#ifndef OTMOTION_LOG_HPP
#define OTMOTION_LOG_HPP

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace otmotion::log {

enum class level { error = 0, warn = 1, info = 2, debug = 3 };

/// Threshold read once from OTMOTION_LOG (error|warn|info|debug); default warn.
inline level threshold()
{
    static const level lvl = [] {
        const char* env = std::getenv("OTMOTION_LOG");
        if (!env) {
            return level::warn;
        }
        const std::string_view v(env);
        if (v == "error") return level::error;
        if (v == "info") return level::info;
        if (v == "debug") return level::debug;
        return level::warn;
    }();
    return lvl;
}

inline bool enabled(level l) { return static_cast<int>(l) <= static_cast<int>(threshold()); }

template <typename... Args>
void write(level l, const Args&... args)
{
    if (!enabled(l)) {
        return;
    }
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[otmotion " << names[static_cast<int>(l)] << "] ";
    (std::cerr << ... << args);
    std::cerr << '\n';
}

template <typename... Args> void error(const Args&... a) { write(level::error, a...); }
template <typename... Args> void warn(const Args&... a) { write(level::warn, a...); }
template <typename... Args> void info(const Args&... a) { write(level::info, a...); }
template <typename... Args> void debug(const Args&... a) { write(level::debug, a...); }

} // namespace otmotion::log

#endif // OTMOTION_LOG_HPP
