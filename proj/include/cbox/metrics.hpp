#pragma once

#include <fstream>
#include <string>

#include "json.hpp"

namespace cbox {

// Line-delimited JSON metrics sink. A null writer (default constructed) is a
// no-op so training code can emit unconditionally.
class MetricsWriter {
  public:
    MetricsWriter() = default;
    explicit MetricsWriter(const std::string& path);

    void write(const nlohmann::json& record);
    bool active() const { return out_.is_open(); }

  private:
    std::ofstream out_;
};

// FNV-1a digest of a file's bytes, hex-encoded. Used by run manifests.
std::string digest_file(const std::string& path);

}  // namespace cbox
