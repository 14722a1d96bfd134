#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace gapo::diff {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

// Ordered segment table; segments tile [0, total) with no gaps or overlaps.
using Layout = std::vector<Segment>;

// Throws InputError unless `layout` partitions [0, total) in order.
void validate_layout(const Layout& layout, std::size_t total);

// Flat real parameter store with named segments.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<double> values, Layout layout);

  // Builds a zero vector laid out as consecutive (name, length) segments.
  static ParamVector zeros(const std::vector<std::pair<std::string, std::size_t>>& segments);

  std::size_t size() const noexcept { return values_.size(); }
  const Layout& layout() const noexcept { return layout_; }
  const Segment& segment(const std::string& name) const;
  bool has_segment(const std::string& name) const;

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> segment_values(const std::string& name);
  std::span<const double> segment_values(const std::string& name) const;

  // Replace all values; length must match. Throws NumericError on NaN/Inf.
  void assign(std::span<const double> values);

  bool all_finite() const;
  // Bitwise comparison of values and equality of layouts.
  bool bit_identical(const ParamVector& other) const;

 private:
  std::vector<double> values_;
  Layout layout_;
};

// Same length and segment layout as the parameters it differentiates.
struct Gradient {
  std::vector<double> values;
  Layout layout;
};

// A set of segment names resolved against a layout.
class ScopeMask {
 public:
  ScopeMask() = default;
  explicit ScopeMask(std::set<std::string> segments);

  static ScopeMask all(const Layout& layout);
  static ScopeMask only(std::string segment) { return ScopeMask({std::move(segment)}); }

  const std::set<std::string>& segments() const noexcept { return segments_; }
  // An empty mask means "every segment".
  bool is_full() const noexcept { return segments_.empty(); }

  // 0/1 vector over parameter indices. Throws InputError on unknown names.
  std::vector<double> resolve(const Layout& layout) const;
  // Sorted parameter indices inside the scope.
  std::vector<std::size_t> indices(const Layout& layout) const;
  std::string describe() const;

 private:
  std::set<std::string> segments_;
};

double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace gapo::diff
