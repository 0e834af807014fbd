#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ratspn {

/// Sorted set of 0-based variable indices.
using VariableScope = std::vector<std::uint32_t>;

enum class RegionKind { Root, Internal, Leaf };

struct Region {
  VariableScope scope;

  friend bool operator==(const Region&, const Region&) = default;
};

/// A 2-partition of `parent` into `first` and `second`. Generated graphs
/// keep |first| >= |second|.
struct Partition {
  std::size_t parent = 0;
  std::size_t first = 0;
  std::size_t second = 0;

  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Bipartite DAG of regions and partitions. Region 0 is the root by
/// convention; regions and partitions are kept in insertion order so that
/// downstream block layouts are deterministic.
///
/// The struct is a plain value: nothing prevents building an invalid graph by
/// hand. Use validate_region_graph() to check one.
struct RegionGraph {
  std::uint32_t num_vars = 0;
  std::uint32_t depth = 0;
  std::uint32_t repetitions = 0;
  std::uint64_t seed = 0;
  std::vector<Region> regions;
  std::vector<Partition> partitions;

  std::size_t root() const { return 0; }
  RegionKind kind(std::size_t region) const;

  /// Indices of partitions whose parent is `region`, in insertion order.
  std::vector<std::size_t> child_partitions(std::size_t region) const;

  /// Number of partitions on the longest path from `region` down to a leaf
  /// region.
  std::size_t height(std::size_t region) const;

  /// Per-region heights, computed in one pass.
  std::vector<std::size_t> heights() const;

  friend bool operator==(const RegionGraph&, const RegionGraph&) = default;
};

/// Random region graph: R independent recursive balanced splits of the full
/// scope down to `depth`, with regions merged by scope and partitions merged
/// by (parent, unordered child pair). Deterministic in `seed`.
///
/// A split is redrawn when one of its regions (two or more variables) already
/// exists at a different split depth, so that every shared region sits at one
/// depth and no path exceeds `depth` partitions. If no collision-free draw is
/// found after a bounded number of attempts the last draw is kept.
RegionGraph random_region_graph(std::uint32_t num_vars, std::uint32_t depth,
                                std::uint32_t repetitions, std::uint64_t seed);

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

/// Check the region-graph conditions: single full-scope root without parents,
/// every other region has a parent, partition children are disjoint and cover
/// the parent, scopes are well-formed and unique, partitions are unique, and
/// the graph is acyclic.
ValidationReport validate_region_graph(const RegionGraph& graph);

}  // namespace ratspn
