#include "cbox/metrics.hpp"

#include <sstream>
#include <stdexcept>

#include "cbox/rng.hpp"

namespace cbox {

MetricsWriter::MetricsWriter(const std::string& path) : out_(path) {
    if (!out_) {
        throw std::runtime_error("cannot open metrics file '" + path + "'");
    }
}

void MetricsWriter::write(const nlohmann::json& record) {
    if (!out_.is_open()) return;
    out_ << record.dump() << "\n";
    out_.flush();
}

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path + "' for digest");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    std::ostringstream hex;
    hex << std::hex << fnv1a64(bytes);
    return hex.str();
}

}  // namespace cbox
