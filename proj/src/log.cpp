#include "ckad/log.hpp"

#include <json.hpp>

#include <iostream>
#include <mutex>
#include <vector>

namespace ckad::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](const Record& r) { std::cerr << to_json_line(r) << '\n'; };
  return sink;
}

void emit(Record r) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) current_sink()(r);
}

}  // namespace

std::string to_json_line(const Record& r) {
  nlohmann::json j;
  j["level"] = r.level;
  j["component"] = r.component;
  j["event"] = r.event;
  if (!r.detail.empty()) j["detail"] = r.detail;
  return j.dump();
}

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink old = std::move(current_sink());
  current_sink() = std::move(sink);
  return old;
}

void warn(std::string_view component, std::string_view event, std::string_view detail) {
  emit({"warning", std::string(component), std::string(event), std::string(detail)});
}

void info(std::string_view component, std::string_view event, std::string_view detail) {
  emit({"info", std::string(component), std::string(event), std::string(detail)});
}

ScopedCapture::ScopedCapture() {
  previous_ = set_sink([this](const Record& r) { records_.push_back(r); });
}

ScopedCapture::~ScopedCapture() { set_sink(std::move(previous_)); }

std::size_t ScopedCapture::count(std::string_view event) const {
  std::size_t c = 0;
  for (const auto& r : records_)
    if (r.event == event) ++c;
  return c;
}

}  // namespace ckad::log
