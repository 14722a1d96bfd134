#include "gapo/diff/param_vector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gapo/errors.hpp"

namespace gapo::diff {

void validate_layout(const Layout& layout, std::size_t total) {
  std::size_t cursor = 0;
  std::set<std::string> names;
  for (const auto& seg : layout) {
    if (seg.offset != cursor) {
      throw InputError("segment '" + seg.name + "' does not start where the previous one ends");
    }
    if (seg.length == 0) throw InputError("segment '" + seg.name + "' is empty");
    if (!names.insert(seg.name).second) throw InputError("duplicate segment '" + seg.name + "'");
    cursor += seg.length;
  }
  if (cursor != total) throw InputError("segments do not cover the parameter vector");
}

ParamVector::ParamVector(std::vector<double> values, Layout layout)
    : values_(std::move(values)), layout_(std::move(layout)) {
  validate_layout(layout_, values_.size());
  if (!all_finite()) throw NumericError("ParamVector", "non-finite parameter value");
}

ParamVector ParamVector::zeros(const std::vector<std::pair<std::string, std::size_t>>& segments) {
  Layout layout;
  std::size_t offset = 0;
  for (const auto& [name, len] : segments) {
    layout.push_back({name, offset, len});
    offset += len;
  }
  return ParamVector(std::vector<double>(offset, 0.0), std::move(layout));
}

const Segment& ParamVector::segment(const std::string& name) const {
  auto it = std::find_if(layout_.begin(), layout_.end(),
                         [&](const Segment& s) { return s.name == name; });
  if (it == layout_.end()) throw InputError("unknown segment '" + name + "'");
  return *it;
}

bool ParamVector::has_segment(const std::string& name) const {
  return std::any_of(layout_.begin(), layout_.end(),
                     [&](const Segment& s) { return s.name == name; });
}

std::span<double> ParamVector::segment_values(const std::string& name) {
  const auto& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.length);
}

std::span<const double> ParamVector::segment_values(const std::string& name) const {
  const auto& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.length);
}

void ParamVector::assign(std::span<const double> values) {
  if (values.size() != values_.size()) throw InputError("ParamVector::assign: length mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("ParamVector::assign", "non-finite parameter update");
  }
  std::copy(values.begin(), values.end(), values_.begin());
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool ParamVector::bit_identical(const ParamVector& other) const {
  return layout_ == other.layout_ && values_.size() == other.values_.size() &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

ScopeMask::ScopeMask(std::set<std::string> segments) : segments_(std::move(segments)) {}

ScopeMask ScopeMask::all(const Layout& layout) {
  std::set<std::string> names;
  for (const auto& s : layout) names.insert(s.name);
  return ScopeMask(std::move(names));
}

std::vector<double> ScopeMask::resolve(const Layout& layout) const {
  std::size_t total = layout.empty() ? 0 : layout.back().offset + layout.back().length;
  std::vector<double> mask(total, 0.0);
  for (auto idx : indices(layout)) mask[idx] = 1.0;
  return mask;
}

std::vector<std::size_t> ScopeMask::indices(const Layout& layout) const {
  for (const auto& name : segments_) {
    bool found = std::any_of(layout.begin(), layout.end(),
                             [&](const Segment& s) { return s.name == name; });
    if (!found) throw InputError("scope names unknown segment '" + name + "'");
  }
  std::vector<std::size_t> out;
  for (const auto& s : layout) {
    if (is_full() || segments_.count(s.name) != 0) {
      for (std::size_t i = 0; i < s.length; ++i) out.push_back(s.offset + i);
    }
  }
  return out;
}

std::string ScopeMask::describe() const {
  if (is_full()) return "full";
  std::string out;
  for (const auto& s : segments_) {
    if (!out.empty()) out += "+";
    out += s;
  }
  return out;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace gapo::diff
