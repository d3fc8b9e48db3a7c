#include "aifa/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include "aifa/errors.hpp"

namespace aifa {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
  if (header_.empty()) throw DomainError("CSV header must not be empty");
}

CsvTable::Row CsvTable::row() {
  cells_.emplace_back();
  return Row(*this);
}

CsvTable::Row& CsvTable::Row::operator<<(double v) {
  table_.cells_.back().push_back(format_double(v));
  return *this;
}

CsvTable::Row& CsvTable::Row::operator<<(long long v) {
  table_.cells_.back().push_back(std::to_string(v));
  return *this;
}

CsvTable::Row& CsvTable::Row::operator<<(std::string_view v) {
  if (v.find_first_of(",\"\n") != std::string_view::npos) {
    std::string q = "\"";
    for (char c : v) {
      if (c == '"') q += '"';
      q += c;
    }
    table_.cells_.back().push_back(q + "\"");
  } else {
    table_.cells_.back().emplace_back(v);
  }
  return *this;
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : cells_) {
    if (r.size() != header_.size()) throw DomainError("CSV row length does not match the header");
    line(r);
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DomainError("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
}

Eigen::MatrixXd read_observations_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "row,dim,value") throw DomainError(path.string() + ": header must be row,dim,value");
  struct Cell {
    long row, dim;
    double value;
  };
  std::vector<Cell> cells;
  long rows = 0, dims = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Cell c{};
    const char* p = line.data();
    const char* end = p + line.size();
    auto field = [&](auto& out, bool last) {
      const auto r = std::from_chars(p, end, out);
      if (r.ec != std::errc() || (last ? r.ptr != end : (r.ptr == end || *r.ptr != ',')))
        throw DomainError(path.string() + ": malformed line " + std::to_string(lineno));
      p = last ? r.ptr : r.ptr + 1;
    };
    field(c.row, false);
    field(c.dim, false);
    field(c.value, true);
    if (c.row < 0 || c.dim < 0) throw DomainError(path.string() + ": negative index on line " + std::to_string(lineno));
    rows = std::max(rows, c.row + 1);
    dims = std::max(dims, c.dim + 1);
    cells.push_back(c);
  }
  if (rows == 0) throw DomainError(path.string() + ": no observations");
  if (static_cast<long>(cells.size()) != rows * dims) throw DomainError(path.string() + ": observation grid is incomplete");
  Eigen::MatrixXd Y(rows, dims);
  std::set<std::pair<long, long>> seen;
  for (const auto& c : cells) {
    if (!seen.emplace(c.row, c.dim).second) throw DomainError(path.string() + ": duplicate cell");
    Y(c.row, c.dim) = c.value;
  }
  return Y;
}

std::string observations_to_csv(const Eigen::MatrixXd& Y) {
  CsvTable t({"row", "dim", "value"});
  for (Eigen::Index n = 0; n < Y.rows(); ++n)
    for (Eigen::Index d = 0; d < Y.cols(); ++d) t.row() << static_cast<long long>(n) << static_cast<long long>(d) << Y(n, d);
  return t.str();
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string library_version() { return AIFA_VERSION; }

nlohmann::json Manifest::to_json() const {
  return {{"schema_version", kManifestSchemaVersion},
          {"subcommand", subcommand},
          {"config_hash", config_hash(config)},
          {"config", config},
          {"library_version", library_version()},
          {"seed", seed},
          {"replicates", replicates},
          {"threads", threads},
          {"wall_time_s", wall_time_s},
          {"pass", pass},
          {"outputs", outputs}};
}

}  // namespace aifa
