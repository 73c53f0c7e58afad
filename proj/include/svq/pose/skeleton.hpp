#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace svq {

// Vertex groups of one pooling level; members index the previous level
// (raw joints for the first level).
using Partition = std::vector<std::vector<std::size_t>>;

struct SkeletonSpec {
  std::size_t V = 0;
  std::vector<std::array<std::size_t, 2>> edges;
  std::size_t left_shoulder = 0;
  std::size_t right_shoulder = 0;
  std::vector<Partition> pooling_levels;
  std::vector<std::string> names;  // optional

  // Throws std::invalid_argument describing the first violated rule.
  void validate() const;

  // Vertex count after `level` pooling steps (0 = raw joints).
  std::size_t vertices_at(std::size_t level) const;
  // Edges of the coarsened graph: two groups touch if any member edge joins them.
  std::vector<std::array<std::size_t, 2>> edges_at(std::size_t level) const;
};

nlohmann::json skeleton_to_json(const SkeletonSpec& s);
SkeletonSpec skeleton_from_json(const nlohmann::json& j);
SkeletonSpec load_skeleton(const std::string& path);
void save_skeleton(const SkeletonSpec& s, const std::string& path);

// 13-joint upper body: head, neck, shoulders, elbows, wrists, hands, hips.
// Pools 13 -> 5 (torso, two arms, two hands) -> 2 (sides) -> 1.
SkeletonSpec upper_body13();

namespace joint13 {
inline constexpr std::size_t head = 0, neck = 1, rsho = 2, relb = 3, rwri = 4, rhand = 5, lsho = 6, lelb = 7,
                             lwri = 8, lhand = 9, rhip = 10, lhip = 11, midhip = 12;
}

}  // namespace svq
