#pragma once

// Expert routing tree: greedy descent, path-tallied LCA insertion with
// outlier-path pruning, and backward connections that repair masking.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hge/batch.hpp"

namespace hge {

using NodeId = int;

struct TreeNode {
  NodeId id = 0;
  std::optional<ExpertId> expert;  // absent only for the root
  NodeId parent = -1;
  std::vector<NodeId> children;     // insertion order
};

class ExpertTree {
 public:
  ExpertTree();

  /// Every listed expert as a child of the root, in order.
  static ExpertTree flat(std::span<const ExpertId> experts);

  NodeId root() const { return 0; }
  const TreeNode& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  NodeId add_child(NodeId parent, ExpertId expert);

  /// Distinct experts referenced by any node, in first-reference (node id) order.
  std::vector<ExpertId> experts() const;
  int expert_count() const { return static_cast<int>(experts().size()); }
  bool references(ExpertId expert) const;

  /// Pre-order descendants of `id`, excluding `id` itself.
  std::vector<NodeId> descendants(NodeId id) const;
  int depth(NodeId id) const;

  /// Throws std::logic_error when the structure is not a rooted tree with
  /// consistent parent/child links and an expert on every non-root node.
  void validate() const;

  bool operator==(const ExpertTree& other) const;

  /// Rebuilds from explicit nodes (snapshot loading); validates.
  static ExpertTree from_nodes(std::vector<TreeNode> nodes);

 private:
  std::vector<TreeNode> nodes_;
};

/// A root-anchored node sequence with the number of batches that took it.
struct TraversalPath {
  std::vector<NodeId> nodes;
  long count = 1;

  bool operator==(const TraversalPath&) const = default;
};

/// Unique paths with counts, in first-seen order.
class PathTally {
 public:
  void add(const std::vector<NodeId>& nodes, long count = 1);
  const std::vector<TraversalPath>& paths() const { return paths_; }
  long total() const;
  bool empty() const { return paths_.empty(); }
  void clear() { paths_.clear(); }

 private:
  std::vector<TraversalPath> paths_;
};

/// Autoencoding loss of an expert on the batch currently being routed.
using LossProbe = std::function<double(ExpertId)>;

struct RouteResult {
  ExpertId expert = -1;
  int experts_queried = 0;
  std::vector<NodeId> path;  // visited nodes, starting at the root
};

/// Greedy descent: at each node pick the child whose expert has the lowest
/// loss (ties to the lowest expert id); descend while that strictly improves on
/// the running best, stop at a leaf otherwise. Each distinct expert is probed
/// at most once per call.
RouteResult hge_forward(const ExpertTree& tree, const LossProbe& probe);

/// Sorts by count descending (stable) and keeps the shortest prefix whose
/// cumulative count exceeds threshold * total.
std::vector<TraversalPath> prune_paths(std::vector<TraversalPath> paths, double threshold);

/// Deepest node that is a prefix element of every path.
NodeId lca(const ExpertTree& tree, std::span<const TraversalPath> paths);

/// For a possibly masked expert: one loss probe per replay batch it holds.
using ReplayProbes = std::function<std::vector<LossProbe>(ExpertId)>;

struct Insertion {
  NodeId node = -1;
  NodeId parent = -1;
  std::vector<NodeId> backward_nodes;
};

/// Inserts `expert` under the LCA of its pruned paths (or under the root when
/// the tree holds at most one expert, or always when `pin_to_root`), then adds
/// a backward node under the new node for every expert below the insertion
/// parent whose replay data now routes to the new expert.
Insertion promote_into_tree(ExpertTree& tree, ExpertId expert, std::span<const TraversalPath> paths,
                            double path_threshold, const ReplayProbes& replay_probes, bool pin_to_root = false);

/// DOT digraph: nodes labeled "root" / "e<id>", parent -> child edges, nodes in
/// id order. With `domains`, nodes are filled with one color per domain.
std::string to_dot(const ExpertTree& tree, const std::map<ExpertId, int>* domains = nullptr);

/// JSON snapshot {"root":0,"nodes":[{"id","expert","parent","children"}...]}.
std::string tree_to_json(const ExpertTree& tree, const std::map<ExpertId, int>* domains = nullptr);
ExpertTree tree_from_json(const std::string& text, std::map<ExpertId, int>* domains = nullptr);

}  // namespace hge
