#pragma once

#include <iostream>
#include <mutex>
#include <string_view>

namespace kernelscope::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline Level& threshold() {
    static Level level = Level::warn;
    return level;
}

inline void write(Level level, std::string_view msg) {
    static std::mutex mutex;
    if (level < threshold()) return;
    static constexpr std::string_view tags[] = {"debug", "info", "warn", "error"};
    std::lock_guard lock(mutex);
    std::cerr << "[kernelscope " << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::debug, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }

}  // namespace kernelscope::log
