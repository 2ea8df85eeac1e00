#include "testutil.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ebnet/errors.hpp"

namespace fs = std::filesystem;

namespace ebtest {

double rel_linf(const std::vector<double>& got, const std::vector<double>& want) {
  if (got.size() != want.size()) return std::numeric_limits<double>::infinity();
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::fabs(got[i] - want[i]));
    den = std::max(den, std::fabs(want[i]));
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

double rel_linf(const ebnet::Tensor& got, const ebnet::Tensor& want) {
  if (!got.same_shape(want)) return std::numeric_limits<double>::infinity();
  return rel_linf(got.raw(), want.raw());
}

double max_abs_diff(const ebnet::Tensor& a, const ebnet::Tensor& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool bit_identical(const ebnet::Tensor& a, const ebnet::Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double x = a[i], y = b[i];
    if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
  }
  return true;
}

ebnet::Tensor random_tensor(const std::vector<int>& shape, std::mt19937_64& rng,
                            double lo, double hi) {
  ebnet::Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

std::string scratch_dir(const std::string& tag) {
  static std::atomic<uint64_t> counter{0};
  fs::path base = fs::temp_directory_path() / "ebnet_tests";
  fs::path dir = base / (tag + "_" + std::to_string(::getpid()) + "_" +
                         std::to_string(counter.fetch_add(1)));
  fs::create_directories(dir);
  return dir.string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace ebtest
