#pragma once

#include <spdlog/spdlog.h>

#include <memory>

namespace complaints::log {

// All library diagnostics go through one named logger so callers (and tests)
// can swap its sinks without touching the default spdlog logger.
inline std::shared_ptr<spdlog::logger> logger() {
  static auto instance = [] {
    auto existing = spdlog::get("complaints");
    if (existing) return existing;
    auto created = std::make_shared<spdlog::logger>(
        "complaints", spdlog::default_logger()->sinks().begin(),
        spdlog::default_logger()->sinks().end());
    created->set_level(spdlog::level::info);
    spdlog::register_logger(created);
    return created;
  }();
  return instance;
}

template <typename... Args>
void warn(fmt::format_string<Args...> fmt, Args&&... args) {
  logger()->warn(fmt, std::forward<Args>(args)...);
}

template <typename... Args>
void info(fmt::format_string<Args...> fmt, Args&&... args) {
  logger()->info(fmt, std::forward<Args>(args)...);
}

template <typename... Args>
void debug(fmt::format_string<Args...> fmt, Args&&... args) {
  logger()->debug(fmt, std::forward<Args>(args)...);
}

}  // namespace complaints::log
