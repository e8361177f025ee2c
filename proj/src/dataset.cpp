#include "hidden_ode/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

namespace hidden_ode {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Columns named <prefix>_<k>; returns their positions ordered by k and
// requires k to run 0..n-1 without gaps.
std::vector<std::size_t> columns_with_prefix(const std::vector<std::string_view>& header,
                                             char prefix, bool required) {
  std::map<long, std::size_t> found;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string_view h = header[c];
    if (h.size() < 3 || h[0] != prefix || h[1] != '_') continue;
    long k = -1;
    const auto [ptr, ec] = std::from_chars(h.data() + 2, h.data() + h.size(), k);
    if (ec != std::errc{} || ptr != h.data() + h.size() || k < 0) {
      throw ParseError("line 1: unrecognized column '" + std::string(h) + "'", 1);
    }
    if (!found.emplace(k, c).second) {
      throw ParseError("line 1: duplicate column '" + std::string(h) + "'", 1);
    }
  }
  if (required && found.empty()) {
    throw ParseError(std::string("line 1: missing column '") + prefix + "_0'", 1);
  }
  std::vector<std::size_t> cols;
  long expect = 0;
  for (const auto& [k, c] : found) {
    if (k != expect) {
      throw ParseError(std::string("line 1: missing column '") + prefix + "_" +
                           std::to_string(expect) + "'",
                       1);
    }
    cols.push_back(c);
    ++expect;
  }
  return cols;
}

double parse_number(std::string_view s, std::size_t line, std::size_t col) {
  s = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": column " + std::to_string(col + 1) +
                         " is not a finite number: '" + std::string(s) + "'",
                     line);
  }
  return v;
}

}  // namespace

void Dataset::validate(double rel_tol) const {
  const std::size_t n = times.size();
  if (inputs.size() != n || measurements.size() != n || (!states.empty() && states.size() != n)) {
    throw ConfigError("dataset sequences have different lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (inputs[i].size() != input_dim() || measurements[i].size() != output_dim() ||
        (!states.empty() && states[i].size() != state_dim())) {
      throw ConfigError("dataset row " + std::to_string(i) + " has inconsistent widths");
    }
  }
  if (n < 2) return;
  const double h = times[1] - times[0];
  if (!(h > 0.0)) throw ConfigError("dataset times must be strictly increasing");
  for (std::size_t i = 1; i < n; ++i) {
    const double d = times[i] - times[i - 1];
    if (std::abs(d - h) > rel_tol * h) {
      throw ConfigError("non-uniform time step at row " + std::to_string(i));
    }
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string dataset_to_csv(const Dataset& data) {
  data.validate();
  std::string out = "t";
  for (Index k = 0; k < data.input_dim(); ++k) out += ",u_" + std::to_string(k);
  for (Index k = 0; k < data.output_dim(); ++k) out += ",y_" + std::to_string(k);
  for (Index k = 0; k < data.state_dim(); ++k) out += ",x_" + std::to_string(k);
  out += '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += format_double(data.times[i]);
    for (Index k = 0; k < data.input_dim(); ++k) out += ',' + format_double(data.inputs[i][k]);
    for (Index k = 0; k < data.output_dim(); ++k) out += ',' + format_double(data.measurements[i][k]);
    if (data.has_states()) {
      for (Index k = 0; k < data.state_dim(); ++k) out += ',' + format_double(data.states[i][k]);
    }
    out += '\n';
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  const std::string text = dataset_to_csv(data);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  std::vector<std::string_view> header = split_commas(line);
  for (auto& h : header) h = trim(h);
  if (header.empty() || header[0] != "t") throw ParseError("line 1: first column must be 't'", 1);
  const auto ucols = columns_with_prefix(header, 'u', false);
  const auto ycols = columns_with_prefix(header, 'y', true);
  const auto xcols = columns_with_prefix(header, 'x', false);
  if (1 + ucols.size() + ycols.size() + xcols.size() != header.size()) {
    throw ParseError("line 1: unexpected columns in header", 1);
  }

  Dataset d;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                           std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       lineno);
    }
    d.times.push_back(parse_number(fields[0], lineno, 0));
    auto gather = [&](const std::vector<std::size_t>& cols) {
      Vector v(static_cast<Index>(cols.size()));
      for (std::size_t k = 0; k < cols.size(); ++k) {
        v[static_cast<Index>(k)] = parse_number(fields[cols[k]], lineno, cols[k]);
      }
      return v;
    };
    d.inputs.push_back(gather(ucols));
    d.measurements.push_back(gather(ycols));
    if (!xcols.empty()) d.states.push_back(gather(xcols));
  }
  if (d.empty()) throw ParseError("dataset has no rows", lineno);
  try {
    d.validate(1e-9);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("format error: ") + e.what());
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_dataset(ss.str());
}

}  // namespace hidden_ode
