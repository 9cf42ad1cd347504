#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ckad::log {

// One structured record per line: {"level":"warning","component":...,"event":...,"detail":...}
struct Record {
  std::string level;
  std::string component;
  std::string event;
  std::string detail;
};

using Sink = std::function<void(const Record&)>;

// Replaces the process-wide sink and returns the previous one. The default
// sink writes JSON lines to stderr.
Sink set_sink(Sink sink);

void warn(std::string_view component, std::string_view event, std::string_view detail = {});
void info(std::string_view component, std::string_view event, std::string_view detail = {});

std::string to_json_line(const Record& r);

// Captures records for the lifetime of the object (tests).
class ScopedCapture {
 public:
  ScopedCapture();
  ~ScopedCapture();
  ScopedCapture(const ScopedCapture&) = delete;
  ScopedCapture& operator=(const ScopedCapture&) = delete;

  const std::vector<Record>& records() const { return records_; }
  std::size_t count(std::string_view event) const;

 private:
  std::vector<Record> records_;
  Sink previous_;
};

}  // namespace ckad::log
