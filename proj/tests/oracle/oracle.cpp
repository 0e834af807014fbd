#include "oracle.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace oracle {

namespace {

const double kPi = 3.14159265358979323846;

std::string take_line(const std::string& s, std::size_t& pos) {
  auto end = s.find('\n', pos);
  if (end == std::string::npos) throw std::runtime_error("oracle: truncated file");
  std::string line = s.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double leaf_value(const Model& m, const Node& n, const std::vector<double>& x,
                  const std::vector<bool>& missing, const std::vector<double>& p) {
  double value = 1.0;
  for (std::size_t k = 0; k < n.vars.size(); ++k) {
    const unsigned v = n.vars[k];
    if (missing[v]) continue;
    const double a = p[n.param_offset + k];
    if (m.gaussian) {
      double var = 1.0;
      if (n.log_var_offset >= 0) var = std::max(std::exp(p[n.log_var_offset + k]), 1e-4);
      value *= std::exp(-(x[v] - a) * (x[v] - a) / (2 * var)) / std::sqrt(2 * kPi * var);
    } else {
      const double q = sigmoid(a);
      value *= std::pow(q, x[v]) * std::pow(1 - q, 1 - x[v]);
    }
  }
  return value;
}

double eval(const Model& m, std::size_t id, const std::vector<double>& x,
            const std::vector<bool>& missing, const std::vector<double>& p,
            std::vector<double>& memo, std::vector<char>& done) {
  if (done[id]) return memo[id];
  const Node& n = m.nodes[id];
  double value = 0.0;
  switch (n.kind) {
    case Node::Kind::Leaf:
      value = leaf_value(m, n, x, missing, p);
      break;
    case Node::Kind::Product:
      value = 1.0;
      for (auto c : n.children) value *= eval(m, c, x, missing, p, memo, done);
      break;
    case Node::Kind::Sum: {
      // normalized weights from raw logits
      double z = 0.0;
      for (std::size_t k = 0; k < n.children.size(); ++k) z += std::exp(p[n.param_offset + k]);
      for (std::size_t k = 0; k < n.children.size(); ++k) {
        value += std::exp(p[n.param_offset + k]) / z * eval(m, n.children[k], x, missing, p, memo, done);
      }
      break;
    }
  }
  done[id] = 1;
  memo[id] = value;
  return value;
}

}  // namespace

Model parse(const std::string& bytes) {
  std::size_t pos = 0;
  std::istringstream first(take_line(bytes, pos));
  std::string magic, encoding;
  int version = 0;
  first >> magic >> version >> encoding;
  if (magic != "ratspn-model" || version != 1) throw std::runtime_error("oracle: unknown file");
  const auto h = nlohmann::json::parse(take_line(bytes, pos));

  Model m;
  const auto& st = h.at("structure");
  m.num_vars = st.at("num_vars").get<std::size_t>();
  m.num_classes = st.at("classes").get<std::size_t>();
  const auto S = st.at("sums").get<std::size_t>();
  const auto I = st.at("leaves").get<std::size_t>();
  m.gaussian = h.at("leaf_kind").get<std::string>() == "gaussian";
  const bool train_var = h.at("train_variance").get<bool>();
  const auto regions = h.at("regions").get<std::vector<std::vector<unsigned>>>();
  const auto parts = h.at("partitions").get<std::vector<std::vector<std::size_t>>>();

  // A region that is nobody's parent holds leaves; the others hold sums.
  std::set<std::size_t> parents;
  for (const auto& p : parts) parents.insert(p[0]);
  std::vector<std::size_t> leaf_regions, sum_regions;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    if (parents.count(r) || (parts.empty() && r == 0)) sum_regions.push_back(r);
    if (!parents.count(r)) leaf_regions.push_back(r);
  }

  // File order: sum logits per sum region, leaf rows per leaf region,
  // then log-variances in the leaf order.
  std::map<std::size_t, std::vector<std::size_t>> inputs_of;  // region -> partitions
  for (std::size_t i = 0; i < parts.size(); ++i) inputs_of[parts[i][0]].push_back(i);

  auto region_width = [&](std::size_t r) {
    if (!parents.count(r)) return I;
    return r == 0 ? m.num_classes : S;
  };
  std::size_t offset = 0;
  std::map<std::size_t, std::size_t> sum_offset, leaf_offset, log_var_offset;
  for (auto r : sum_regions) {
    sum_offset[r] = offset;
    std::size_t in = 0;
    if (parts.empty()) {
      in = I;
    } else {
      for (auto p : inputs_of[r]) in += region_width(parts[p][1]) * region_width(parts[p][2]);
    }
    offset += (r == 0 ? m.num_classes : S) * in;
  }
  for (auto r : leaf_regions) {
    leaf_offset[r] = offset;
    offset += I * regions[r].size();
  }
  if (train_var) {
    for (auto r : leaf_regions) {
      log_var_offset[r] = offset;
      offset += I * regions[r].size();
    }
  }
  const std::size_t total = offset;

  if (encoding == "raw") {
    take_line(bytes, pos);
    m.params.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes.at(pos + 8 * i + b));
      std::memcpy(&m.params[i], &bits, 8);
    }
  } else {
    std::istringstream in(bytes.substr(pos));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line == "end") continue;
      if (line.rfind("sum ", 0) == 0 || line.rfind("leaf ", 0) == 0 || line.rfind("logvar ", 0) == 0) continue;
      std::istringstream row(line);
      std::string tok;
      while (row >> tok) m.params.push_back(std::strtod(tok.c_str(), nullptr));
    }
    if (m.params.size() != total) throw std::runtime_error("oracle: payload size mismatch");
  }

  // Expand to nodes, regions bottom-up (recursive on demand).
  std::map<std::size_t, std::vector<std::size_t>> region_nodes;
  std::function<const std::vector<std::size_t>&(std::size_t)> build = [&](std::size_t r)
      -> const std::vector<std::size_t>& {
    if (auto it = region_nodes.find(r); it != region_nodes.end()) return it->second;
    std::vector<std::size_t> ids;
    if (!parents.count(r)) {
      for (std::size_t i = 0; i < I; ++i) {
        Node n;
        n.kind = Node::Kind::Leaf;
        n.vars = regions[r];
        n.param_offset = static_cast<long>(leaf_offset[r] + i * regions[r].size());
        if (train_var) n.log_var_offset = static_cast<long>(log_var_offset[r] + i * regions[r].size());
        ids.push_back(m.nodes.size());
        m.nodes.push_back(std::move(n));
      }
    }
    if (parents.count(r) || (parts.empty() && r == 0)) {
      std::vector<std::size_t> products;
      if (parts.empty()) {
        products = ids;
        ids.clear();
      }
      for (auto p : inputs_of[r]) {
        const auto left = build(parts[p][1]);
        const auto right = build(parts[p][2]);
        for (auto a : left) {
          for (auto b : right) {
            Node n;
            n.kind = Node::Kind::Product;
            n.children = {a, b};
            products.push_back(m.nodes.size());
            m.nodes.push_back(std::move(n));
          }
        }
      }
      const std::size_t width = r == 0 ? m.num_classes : S;
      for (std::size_t s = 0; s < width; ++s) {
        Node n;
        n.kind = Node::Kind::Sum;
        n.children = products;
        n.param_offset = static_cast<long>(sum_offset[r] + s * products.size());
        ids.push_back(m.nodes.size());
        m.nodes.push_back(std::move(n));
      }
    }
    return region_nodes[r] = ids;
  };
  m.roots = build(0);
  return m;
}

Model load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("oracle: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<double> root_values(const Model& m, const std::vector<double>& x,
                                const std::vector<bool>& missing, const std::vector<double>* params) {
  const auto& p = params ? *params : m.params;
  std::vector<double> memo(m.nodes.size());
  std::vector<char> done(m.nodes.size(), 0);
  std::vector<double> out;
  for (auto r : m.roots) out.push_back(eval(m, r, x, missing, p, memo, done));
  return out;
}

std::vector<double> log_root_values(const Model& m, const std::vector<double>& x,
                                    const std::vector<bool>& missing, const std::vector<double>* params) {
  auto v = root_values(m, x, missing, params);
  for (auto& e : v) e = std::log(e);
  return v;
}

double brute_force_mass(const Model& m, std::size_t cls) {
  if (m.gaussian) throw std::runtime_error("oracle: brute force needs binary variables");
  const std::size_t n = m.num_vars;
  std::vector<bool> none(n, false);
  double total = 0.0;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
    std::vector<double> x(n);
    for (std::size_t v = 0; v < n; ++v) x[v] = static_cast<double>((bits >> v) & 1);
    total += root_values(m, x, none)[cls];
  }
  return total;
}

double brute_force_marginal(const Model& m, std::size_t cls, const std::vector<double>& x,
                            const std::vector<bool>& missing) {
  if (m.gaussian) throw std::runtime_error("oracle: brute force needs binary variables");
  std::vector<std::size_t> free;
  for (std::size_t v = 0; v < m.num_vars; ++v) {
    if (missing[v]) free.push_back(v);
  }
  std::vector<bool> none(m.num_vars, false);
  double total = 0.0;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << free.size()); ++bits) {
    std::vector<double> full = x;
    for (std::size_t k = 0; k < free.size(); ++k) full[free[k]] = static_cast<double>((bits >> k) & 1);
    total += root_values(m, full, none)[cls];
  }
  return total;
}

double quadrature_mass_2d(const Model& m, std::size_t cls, double lo, double hi, std::size_t steps) {
  if (!m.gaussian || m.num_vars != 2) throw std::runtime_error("oracle: need a 2-variable Gaussian model");
  const double h = (hi - lo) / static_cast<double>(steps);
  std::vector<bool> none(2, false);
  double total = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j < steps; ++j) {
      const std::vector<double> x = {lo + (i + 0.5) * h, lo + (j + 0.5) * h};
      total += root_values(m, x, none)[cls];
    }
  }
  return total * h * h;
}

double objective(const Model& m, const std::vector<double>& params,
                 const std::vector<std::vector<double>>& batch, const std::vector<int>& labels,
                 double lambda) {
  std::vector<bool> none(m.num_vars, false);
  double ce = 0.0, nll = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto v = root_values(m, batch[i], none, &params);
    double z = 0.0;
    for (double e : v) z += e;
    ce -= std::log(v[labels[i]] / z);
    nll -= std::log(v[labels[i]]);
  }
  const double n = static_cast<double>(batch.size());
  return lambda * ce / n + (1 - lambda) * nll / (n * static_cast<double>(m.num_vars));
}

std::vector<double> finite_diff_gradient(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> x, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

}  // namespace oracle
