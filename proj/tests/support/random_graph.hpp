#pragma once

// Random computation graphs for gradient property tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nesy/graph.hpp"

namespace nesy::testing {

struct RandomGraph {
  Graph graph;
  NodeId root = 0;
  std::vector<ParameterPtr> params;
};

inline RandomGraph make_random_graph(std::uint64_t seed, std::size_t max_nodes = 50) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  RandomGraph rg;
  Graph& g = rg.graph;
  struct Info {
    NodeId id;
    bool positive;
  };
  std::vector<Info> pool;
  std::vector<char> used;

  auto note = [&](NodeId id, bool positive) {
    used.resize(g.size(), 0);
    pool.push_back({id, positive});
  };
  auto param = [&](Shape s, const char* name) {
    Tensor t(s);
    for (double& v : t.data()) v = unit(rng);
    auto p = std::make_shared<Parameter>(name, std::move(t));
    rg.params.push_back(p);
    const NodeId id = g.parameter(p);
    note(id, false);
    return id;
  };
  auto mark = [&](NodeId id) {
    used.resize(g.size(), 0);
    used[id] = 1;
  };

  param({3, 4}, "a");
  param({4, 3}, "b");
  param({1, 4, 4, 2}, "image");
  const NodeId kernel = param({3, 3, 2, 2}, "kernel");

  // Keeps magnitudes moderate so difference quotients stay well conditioned.
  auto tame = [&](NodeId id, bool positive) {
    double mx = 0.0;
    for (double v : g.value(id).data()) mx = std::max(mx, std::abs(v));
    if (mx > 8.0) {
      mark(id);
      const NodeId s = g.sigmoid(id);
      note(s, true);
      return;
    }
    note(id, positive);
  };

  std::vector<NodeId> scalars;
  const std::size_t budget = max_nodes > 12 ? max_nodes - 12 : 0;
  while (g.size() < budget) {
    const Info a = pool[pick(pool.size())];
    const Shape sa = g.shape(a.id);
    switch (pick(10)) {
      case 0:
      case 1: {  // add / mul with a same-shaped partner
        std::vector<Info> partners;
        for (const Info& i : pool)
          if (g.shape(i.id) == sa) partners.push_back(i);
        const Info b = partners[pick(partners.size())];
        mark(a.id);
        mark(b.id);
        const bool is_add = pick(2) == 0;
        const NodeId r = is_add ? g.add(a.id, b.id) : g.mul(a.id, b.id);
        tame(r, a.positive && b.positive);
        break;
      }
      case 2: {  // matmul
        if (sa.size() != 2) break;
        std::vector<Info> partners;
        for (const Info& i : pool)
          if (g.shape(i.id).size() == 2 && g.shape(i.id)[0] == sa[1]) partners.push_back(i);
        NodeId b;
        if (partners.empty()) {
          b = param({sa[1], 3}, "w");
        } else {
          b = partners[pick(partners.size())].id;
        }
        mark(a.id);
        mark(b);
        tame(g.matmul(a.id, b), false);
        break;
      }
      case 3:
        mark(a.id);
        note(g.relu(a.id), false);
        break;
      case 4:
        mark(a.id);
        note(g.sigmoid(a.id), true);
        break;
      case 5:
        if (sa.empty()) break;
        mark(a.id);
        note(g.softmax(a.id), true);
        break;
      case 6: {  // log of a positive operand
        mark(a.id);
        NodeId x = a.id;
        if (!a.positive) {
          x = g.sigmoid(a.id);
          mark(x);
        }
        tame(g.log(x), false);
        break;
      }
      case 7: {
        const double exps[] = {2.0, 3.0, 0.5, 1.5};
        const double e = exps[a.positive ? pick(4) : pick(2)];
        mark(a.id);
        tame(g.pow(a.id, e), a.positive);
        break;
      }
      case 8:
        if (sa.empty()) break;
        mark(a.id);
        scalars.push_back(g.mean(a.id));
        mark(scalars.back());
        break;
      case 9: {
        if (sa.size() != 4) break;
        mark(a.id);
        tame(g.conv2d(a.id, kernel), false);
        break;
      }
    }
  }

  used.resize(g.size(), 0);
  for (const Info& i : pool)
    if (!used[i.id] && g.size() + 2 < max_nodes) scalars.push_back(g.mean(i.id));
  NodeId root = scalars.empty() ? g.mean(pool.back().id) : scalars.front();
  for (std::size_t i = 1; i < scalars.size() && g.size() < max_nodes; ++i) root = g.add(root, scalars[i]);
  rg.root = root;
  return rg;
}

}  // namespace nesy::testing
