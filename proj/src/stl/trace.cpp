#include "stlrl/stl/trace.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace stlrl::stl {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

Trace::Trace(std::vector<std::string> dims, double dt, std::string id)
    : dims_(std::move(dims)), dt_(dt), id_(std::move(id)) {
  if (dims_.empty()) throw std::invalid_argument("trace needs at least one dimension");
  if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw std::invalid_argument("trace dt must be positive");
}

void Trace::push_back(std::span<const double> sample) {
  if (sample.size() != dims_.size()) {
    throw std::invalid_argument("sample has " + std::to_string(sample.size()) + " entries, trace has " +
                                std::to_string(dims_.size()) + " dims");
  }
  for (double v : sample) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite sample value in trace " + id_);
  }
  values_.insert(values_.end(), sample.begin(), sample.end());
}

std::size_t Trace::dim_index(std::string_view name) const {
  const auto it = std::find(dims_.begin(), dims_.end(), name);
  return it == dims_.end() ? npos : static_cast<std::size_t>(it - dims_.begin());
}

Trace Trace::single(std::vector<std::string> dims, std::span<const double> state, double dt) {
  Trace tr(std::move(dims), dt);
  tr.push_back(state);
  return tr;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_real(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw TraceFormatError("invalid real '" + std::string(text) + "'");
  }
  return v;
}

void write_trace(std::ostream& out, const Trace& trace) {
  out << "# dims: ";
  for (std::size_t i = 0; i < trace.dims().size(); ++i) {
    if (i) out << ',';
    out << trace.dims()[i];
  }
  out << " dt: " << format_real(trace.dt()) << " id: " << trace.id() << '\n';
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const auto s = trace.sample(t);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ',';
      out << format_real(s[i]);
    }
    out << '\n';
  }
}

Trace read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw TraceFormatError("empty trace stream");
  std::string_view header = trim(line);
  if (!header.starts_with("# dims:")) throw TraceFormatError("trace header must start with '# dims:'");
  header.remove_prefix(7);
  const auto dt_pos = header.find(" dt:");
  const auto id_pos = header.find(" id:");
  if (dt_pos == std::string_view::npos || id_pos == std::string_view::npos || id_pos < dt_pos) {
    throw TraceFormatError("trace header must contain 'dt:' and 'id:' fields");
  }
  std::vector<std::string> dims;
  for (auto d : split(trim(header.substr(0, dt_pos)), ',')) {
    d = trim(d);
    if (d.empty()) throw TraceFormatError("empty dimension name in trace header");
    dims.emplace_back(d);
  }
  const double dt = parse_real(header.substr(dt_pos + 4, id_pos - dt_pos - 4));
  std::string id(trim(header.substr(id_pos + 4)));

  Trace tr;
  try {
    tr = Trace(std::move(dims), dt, std::move(id));
  } catch (const std::invalid_argument& e) {
    throw TraceFormatError(e.what());
  }
  std::vector<double> row;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty()) continue;
    row.clear();
    for (auto field : split(body, ',')) row.push_back(parse_real(field));
    if (row.size() != tr.width()) {
      throw TraceFormatError("line " + std::to_string(lineno) + ": expected " + std::to_string(tr.width()) +
                             " values, got " + std::to_string(row.size()));
    }
    try {
      tr.push_back(row);
    } catch (const std::invalid_argument& e) {
      throw TraceFormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (tr.empty()) throw TraceFormatError("trace '" + tr.id() + "' has no samples");
  return tr;
}

void save_trace(const std::filesystem::path& path, const Trace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace file " + path.string());
  write_trace(out, trace);
}

Trace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file " + path.string());
  return read_trace(in);
}

}  // namespace stlrl::stl
