#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace hdshap {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  kInvalidArgument = 1,
  kInvalidSpec,
  kIo,
  kParse,
  kSchemaMismatch,
  kNumerical,
  kMissingArtifact,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, const std::string& message,
                    ErrorCode code = ErrorCode::kInvalidArgument) {
  if (!condition) fail(code, message);
}

// 64-bit FNV-1a; used for config hashes and content fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

// Seed for an independent stream: splitmix64 over (master, FNV-1a(name)).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_name);

// Portable generator: mt19937_64 bits with distribution code defined here,
// so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::string_view stream_name)
      : Rng(derive_seed(master, stream_name)) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound); bound > 0.
  std::uint64_t below(std::uint64_t bound);
  // Standard normal via the Marsaglia polar method.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Number formatting shared by CSV/SVG writers; "%.17g" round-trips doubles.
std::string format_double(double value, int significant = 17);
std::string format_fixed(double value, int decimals);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

}  // namespace hdshap
