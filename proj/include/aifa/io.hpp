#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

namespace aifa {

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

// Comma-separated table with a fixed header; reals use format_double.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  class Row {
   public:
    Row& operator<<(double v);
    Row& operator<<(long long v);
    Row& operator<<(int v) { return *this << static_cast<long long>(v); }
    Row& operator<<(long v) { return *this << static_cast<long long>(v); }
    Row& operator<<(std::size_t v) { return *this << static_cast<long long>(v); }
    Row& operator<<(std::string_view v);
    Row& operator<<(const char* v) { return *this << std::string_view(v); }
    Row& operator<<(const std::string& v) { return *this << std::string_view(v); }

   private:
    friend class CsvTable;
    explicit Row(CsvTable& t) : table_(t) {}
    CsvTable& table_;
  };
  // Cells are appended to the new row with <<; the row length is checked by str().
  Row row();
  std::size_t rows() const { return cells_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> cells_;
};

// Writes to a temporary sibling then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

// row,dim,value triplets into an N x D matrix; every cell must appear once.
Eigen::MatrixXd read_observations_csv(const std::filesystem::path& path);
std::string observations_to_csv(const Eigen::MatrixXd& Y);

// FNV-1a 64-bit hash of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

inline constexpr int kManifestSchemaVersion = 1;
std::string library_version();

struct Manifest {
  std::string subcommand;
  nlohmann::json config;
  std::uint64_t seed = 0;
  long replicates = 0;
  int threads = 1;
  double wall_time_s = 0.0;
  bool pass = true;
  std::vector<std::string> outputs;
  nlohmann::json to_json() const;
};

}  // namespace aifa
