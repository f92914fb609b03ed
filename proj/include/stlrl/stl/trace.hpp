#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlrl::stl {

class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniformly sampled multivariate signal. Samples are stored row-major: one
/// row per time step, one column per dimension.
class Trace {
 public:
  Trace() = default;
  Trace(std::vector<std::string> dims, double dt, std::string id = {});

  const std::vector<std::string>& dims() const { return dims_; }
  double dt() const { return dt_; }
  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }

  std::size_t size() const { return dims_.empty() ? 0 : values_.size() / dims_.size(); }
  std::size_t width() const { return dims_.size(); }
  bool empty() const { return values_.empty(); }

  /// Appends one sample; throws std::invalid_argument on width mismatch or
  /// non-finite entries.
  void push_back(std::span<const double> sample);

  std::span<const double> sample(std::size_t t) const {
    return {values_.data() + t * dims_.size(), dims_.size()};
  }
  double at(std::size_t t, std::size_t dim) const { return values_[t * dims_.size() + dim]; }

  /// Index of a dimension by name, or npos.
  std::size_t dim_index(std::string_view name) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  /// Single-sample trace holding one state.
  static Trace single(std::vector<std::string> dims, std::span<const double> state, double dt = 1.0);

  bool operator==(const Trace&) const = default;

 private:
  std::vector<std::string> dims_;
  double dt_ = 1.0;
  std::string id_;
  std::vector<double> values_;
};

// Line-oriented trace format:
//   # dims: x,y,u,v dt: 0.02 id: <id>
//   0.1,0.2,0,0
//   ...
// Reals are written with the shortest representation that round-trips.
std::string format_real(double v);
double parse_real(std::string_view text);

void write_trace(std::ostream& out, const Trace& trace);
Trace read_trace(std::istream& in);
void save_trace(const std::filesystem::path& path, const Trace& trace);
Trace load_trace(const std::filesystem::path& path);

}  // namespace stlrl::stl
