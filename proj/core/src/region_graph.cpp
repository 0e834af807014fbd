#include "ratspn/region_graph.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "ratspn/error.hpp"
#include "ratspn/random.hpp"

namespace ratspn {

namespace {

constexpr int kMaxRepetitionDraws = 256;

std::string scope_string(const VariableScope& scope) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < scope.size(); ++i) {
    if (i) os << ',';
    os << scope[i];
  }
  os << '}';
  return os.str();
}

struct DraftSplit {
  VariableScope parent;
  VariableScope first;
  VariableScope second;
  std::uint32_t level;  // split depth of the parent; root is 0
};

void draw_splits(const VariableScope& scope, std::uint32_t remaining,
                 std::uint32_t level, Rng& rng, std::vector<DraftSplit>& out) {
  VariableScope order = scope;
  rng.shuffle(std::span<std::uint32_t>(order));
  const std::size_t half = (order.size() + 1) / 2;
  VariableScope first(order.begin(), order.begin() + half);
  VariableScope second(order.begin() + half, order.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  out.push_back({scope, first, second, level});
  if (remaining > 1) {
    if (first.size() > 1) draw_splits(first, remaining - 1, level + 1, rng, out);
    if (second.size() > 1) draw_splits(second, remaining - 1, level + 1, rng, out);
  }
}

}  // namespace

RegionKind RegionGraph::kind(std::size_t region) const {
  if (region == root()) return RegionKind::Root;
  for (const auto& p : partitions) {
    if (p.parent == region) return RegionKind::Internal;
  }
  return RegionKind::Leaf;
}

std::vector<std::size_t> RegionGraph::child_partitions(std::size_t region) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    if (partitions[i].parent == region) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> RegionGraph::heights() const {
  std::vector<std::vector<std::size_t>> children(regions.size());
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    children.at(partitions[i].parent).push_back(i);
  }
  // 0 = unvisited, 1 = in progress, 2 = done
  std::vector<int> state(regions.size(), 0);
  std::vector<std::size_t> h(regions.size(), 0);
  std::function<void(std::size_t)> visit = [&](std::size_t r) {
    if (state[r] == 2) return;
    if (state[r] == 1) throw StructuralError("region graph contains a cycle");
    state[r] = 1;
    std::size_t best = 0;
    for (std::size_t p : children[r]) {
      const auto& part = partitions[p];
      visit(part.first);
      visit(part.second);
      best = std::max(best, 1 + std::max(h[part.first], h[part.second]));
    }
    h[r] = best;
    state[r] = 2;
  };
  for (std::size_t r = 0; r < regions.size(); ++r) visit(r);
  return h;
}

std::size_t RegionGraph::height(std::size_t region) const {
  return heights().at(region);
}

RegionGraph random_region_graph(std::uint32_t num_vars, std::uint32_t depth,
                                std::uint32_t repetitions, std::uint64_t seed) {
  if (num_vars == 0) throw InvalidInput("random_region_graph: num_vars must be >= 1");
  if (depth == 0) throw InvalidInput("random_region_graph: depth must be >= 1");
  if (repetitions == 0) {
    throw InvalidInput("random_region_graph: repetitions must be >= 1");
  }

  RegionGraph g;
  g.num_vars = num_vars;
  g.depth = depth;
  g.repetitions = repetitions;
  g.seed = seed;

  VariableScope full(num_vars);
  for (std::uint32_t v = 0; v < num_vars; ++v) full[v] = v;
  g.regions.push_back({full});
  if (num_vars < 2) return g;

  std::map<VariableScope, std::size_t> index{{full, 0}};
  std::vector<std::uint32_t> level_of{0};
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen_partitions;

  auto collides = [&](const VariableScope& scope, std::uint32_t level) {
    if (scope.size() < 2) return false;
    auto it = index.find(scope);
    return it != index.end() && level_of[it->second] != level;
  };
  auto insert_region = [&](const VariableScope& scope, std::uint32_t level) {
    auto [it, inserted] = index.emplace(scope, g.regions.size());
    if (inserted) {
      g.regions.push_back({scope});
      level_of.push_back(level);
    }
    return it->second;
  };

  Rng rng(seed);
  for (std::uint32_t r = 0; r < repetitions; ++r) {
    std::vector<DraftSplit> draft;
    for (int attempt = 0; attempt < kMaxRepetitionDraws; ++attempt) {
      draft.clear();
      draw_splits(full, depth, 0, rng, draft);
      bool clean = std::none_of(draft.begin(), draft.end(), [&](const DraftSplit& s) {
        return collides(s.first, s.level + 1) || collides(s.second, s.level + 1);
      });
      if (clean) break;
    }
    for (const auto& s : draft) {
      const std::size_t parent = index.at(s.parent);
      const std::size_t a = insert_region(s.first, s.level + 1);
      const std::size_t b = insert_region(s.second, s.level + 1);
      if (seen_partitions.emplace(parent, std::min(a, b), std::max(a, b)).second) {
        g.partitions.push_back({parent, a, b});
      }
    }
  }
  return g;
}

std::string ValidationReport::to_string() const {
  if (ok()) return "ok";
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << '\n';
    os << violations[i];
  }
  return os.str();
}

ValidationReport validate_region_graph(const RegionGraph& g) {
  ValidationReport report;
  auto flag = [&](std::string msg) { report.violations.push_back(std::move(msg)); };

  if (g.num_vars == 0) flag("graph has zero variables");
  if (g.regions.empty()) {
    flag("graph has no regions");
    return report;
  }

  const std::size_t n_regions = g.regions.size();
  std::vector<bool> scope_ok(n_regions, true);
  std::map<VariableScope, std::size_t> first_with_scope;
  for (std::size_t r = 0; r < n_regions; ++r) {
    const auto& scope = g.regions[r].scope;
    const std::string id = "region " + std::to_string(r) + " " + scope_string(scope);
    if (scope.empty()) {
      flag(id + ": empty scope");
      scope_ok[r] = false;
      continue;
    }
    if (!std::is_sorted(scope.begin(), scope.end()) ||
        std::adjacent_find(scope.begin(), scope.end()) != scope.end()) {
      flag(id + ": scope not strictly increasing");
      scope_ok[r] = false;
    }
    if (*std::max_element(scope.begin(), scope.end()) >= g.num_vars) {
      flag(id + ": variable index out of range");
      scope_ok[r] = false;
    }
    auto [it, inserted] = first_with_scope.emplace(scope, r);
    if (!inserted) {
      flag("duplicate scope: regions " + std::to_string(it->second) + " and " +
           std::to_string(r) + " both cover " + scope_string(scope));
    }
  }

  if (g.regions[0].scope.size() != g.num_vars) {
    flag("root region 0 does not cover all variables");
  }

  std::vector<int> parent_count(n_regions, 0);
  std::vector<std::vector<std::size_t>> children(n_regions);
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (std::size_t p = 0; p < g.partitions.size(); ++p) {
    const auto& part = g.partitions[p];
    const std::string id = "partition " + std::to_string(p);
    if (part.parent >= n_regions || part.first >= n_regions || part.second >= n_regions) {
      flag(id + ": region reference out of range");
      continue;
    }
    ++parent_count[part.first];
    ++parent_count[part.second];
    children[part.parent].push_back(part.first);
    children[part.parent].push_back(part.second);
    if (!seen.emplace(part.parent, std::min(part.first, part.second),
                      std::max(part.first, part.second))
             .second) {
      flag(id + ": duplicate partition of region " + std::to_string(part.parent));
    }
    if (!scope_ok[part.parent] || !scope_ok[part.first] || !scope_ok[part.second]) continue;

    const auto& a = g.regions[part.first].scope;
    const auto& b = g.regions[part.second].scope;
    VariableScope overlap;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                          std::back_inserter(overlap));
    if (!overlap.empty()) {
      flag(id + ": children overlap on " + scope_string(overlap));
    }
    VariableScope joined;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(joined));
    if (joined != g.regions[part.parent].scope) {
      flag(id + ": partition does not cover parent region " +
           std::to_string(part.parent));
    }
  }

  if (parent_count[0] > 0) flag("root region 0 has a parent partition");
  for (std::size_t r = 1; r < n_regions; ++r) {
    if (parent_count[r] == 0) {
      flag("region " + std::to_string(r) + " " + scope_string(g.regions[r].scope) +
           " has no parent partition");
    }
  }

  // Cycle check over region -> region reachability.
  std::vector<int> state(n_regions, 0);
  bool cyclic = false;
  std::function<void(std::size_t)> visit = [&](std::size_t r) {
    if (cyclic || state[r] == 2) return;
    if (state[r] == 1) {
      cyclic = true;
      return;
    }
    state[r] = 1;
    for (std::size_t c : children[r]) visit(c);
    state[r] = 2;
  };
  for (std::size_t r = 0; r < n_regions && !cyclic; ++r) visit(r);
  if (cyclic) flag("region graph contains a cycle");

  return report;
}

}  // namespace ratspn
