#include "svq/pose/skeleton.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace svq {

namespace {

void check_partition(const Partition& p, std::size_t n, std::size_t level) {
  std::vector<int> seen(n, 0);
  for (const auto& group : p) {
    if (group.empty()) throw std::invalid_argument("pooling level " + std::to_string(level) + " has an empty group");
    for (std::size_t m : group) {
      if (m >= n) {
        throw std::invalid_argument("pooling level " + std::to_string(level) + " references vertex " +
                                    std::to_string(m) + " of " + std::to_string(n));
      }
      ++seen[m];
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (seen[v] != 1) {
      throw std::invalid_argument("pooling level " + std::to_string(level) + " covers vertex " + std::to_string(v) +
                                  " " + std::to_string(seen[v]) + " times; expected a partition");
    }
  }
}

}  // namespace

void SkeletonSpec::validate() const {
  if (V == 0) throw std::invalid_argument("skeleton: V must be positive");
  if (left_shoulder >= V || right_shoulder >= V) throw std::invalid_argument("skeleton: shoulder id out of range");
  if (left_shoulder == right_shoulder) throw std::invalid_argument("skeleton: shoulders must be distinct vertices");
  if (!names.empty() && names.size() != V) throw std::invalid_argument("skeleton: names must list V entries");
  std::vector<std::vector<std::size_t>> adj(V);
  for (const auto& e : edges) {
    if (e[0] >= V || e[1] >= V) {
      throw std::invalid_argument("skeleton: edge (" + std::to_string(e[0]) + "," + std::to_string(e[1]) +
                                  ") references a vertex >= V=" + std::to_string(V));
    }
    if (e[0] == e[1]) throw std::invalid_argument("skeleton: self-loop on vertex " + std::to_string(e[0]));
    adj[e[0]].push_back(e[1]);
    adj[e[1]].push_back(e[0]);
  }
  std::vector<bool> reached(V, false);
  std::vector<std::size_t> stack{0};
  reached[0] = true;
  while (!stack.empty()) {
    std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t u : adj[v]) {
      if (!reached[u]) {
        reached[u] = true;
        stack.push_back(u);
      }
    }
  }
  for (std::size_t v = 0; v < V; ++v) {
    if (!reached[v]) throw std::invalid_argument("skeleton: graph is not connected (vertex " + std::to_string(v) + ")");
  }
  std::size_t n = V;
  for (std::size_t l = 0; l < pooling_levels.size(); ++l) {
    check_partition(pooling_levels[l], n, l);
    n = pooling_levels[l].size();
  }
}

std::size_t SkeletonSpec::vertices_at(std::size_t level) const {
  if (level > pooling_levels.size()) throw std::out_of_range("skeleton: no pooling level " + std::to_string(level));
  return level == 0 ? V : pooling_levels[level - 1].size();
}

std::vector<std::array<std::size_t, 2>> SkeletonSpec::edges_at(std::size_t level) const {
  if (level > pooling_levels.size()) throw std::out_of_range("skeleton: no pooling level " + std::to_string(level));
  auto current = edges;
  for (std::size_t l = 0; l < level; ++l) {
    const Partition& p = pooling_levels[l];
    std::vector<std::size_t> owner(l == 0 ? V : pooling_levels[l - 1].size());
    for (std::size_t g = 0; g < p.size(); ++g)
      for (std::size_t m : p[g]) owner[m] = g;
    std::set<std::array<std::size_t, 2>> next;
    for (const auto& e : current) {
      std::size_t a = owner[e[0]], b = owner[e[1]];
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      next.insert({a, b});
    }
    current.assign(next.begin(), next.end());
  }
  return current;
}

nlohmann::json skeleton_to_json(const SkeletonSpec& s) {
  nlohmann::json j;
  j["V"] = s.V;
  j["edges"] = nlohmann::json::array();
  for (const auto& e : s.edges) j["edges"].push_back({e[0], e[1]});
  j["left_shoulder"] = s.left_shoulder;
  j["right_shoulder"] = s.right_shoulder;
  j["pooling_levels"] = s.pooling_levels;
  if (!s.names.empty()) j["names"] = s.names;
  return j;
}

SkeletonSpec skeleton_from_json(const nlohmann::json& j) {
  SkeletonSpec s;
  try {
    s.V = j.at("V").get<std::size_t>();
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw std::invalid_argument("skeleton: each edge must be a pair");
      s.edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
    }
    s.left_shoulder = j.at("left_shoulder").get<std::size_t>();
    s.right_shoulder = j.at("right_shoulder").get<std::size_t>();
    s.pooling_levels = j.at("pooling_levels").get<std::vector<Partition>>();
    if (j.contains("names")) s.names = j["names"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("skeleton: ") + e.what());
  }
  s.validate();
  return s;
}

SkeletonSpec load_skeleton(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open skeleton file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return skeleton_from_json(j);
}

void save_skeleton(const SkeletonSpec& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << skeleton_to_json(s).dump(2) << "\n";
}

SkeletonSpec upper_body13() {
  using namespace joint13;
  SkeletonSpec s;
  s.V = 13;
  s.edges = {{head, neck}, {neck, rsho}, {rsho, relb},   {relb, rwri},   {rwri, rhand}, {neck, lsho},
             {lsho, lelb}, {lelb, lwri}, {lwri, lhand}, {neck, midhip}, {midhip, rhip}, {midhip, lhip}};
  s.left_shoulder = lsho;
  s.right_shoulder = rsho;
  s.pooling_levels = {
      {{head, neck, midhip, rhip, lhip}, {rsho, relb}, {rwri, rhand}, {lsho, lelb}, {lwri, lhand}},
      {{0, 1, 2}, {3, 4}},
      {{0, 1}},
  };
  s.names = {"head", "neck", "rsho", "relb", "rwri", "rhand", "lsho", "lelb", "lwri", "lhand", "rhip", "lhip", "midhip"};
  return s;
}

}  // namespace svq
