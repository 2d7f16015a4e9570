#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>

namespace cdx {

/// Line-delimited JSON metrics stream. Records carry no wall-clock fields so
/// reruns with equal (config, seed) produce byte-identical files.
class MetricsWriter {
 public:
  MetricsWriter() = default;

  explicit MetricsWriter(const std::string& path) : file_(path) {
    if (!file_) throw std::runtime_error("cannot open metrics file: " + path);
  }

  void write(const nlohmann::json& record) {
    if (file_.is_open()) file_ << record.dump() << "\n";
  }

  void flush() {
    if (file_.is_open()) file_.flush();
  }

 private:
  std::ofstream file_;
};

}  // namespace cdx
