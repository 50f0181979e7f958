#include "hge/tree.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hge/errors.hpp"

namespace hge {

ExpertTree::ExpertTree() { nodes_.push_back(TreeNode{0, std::nullopt, -1, {}}); }

ExpertTree ExpertTree::flat(std::span<const ExpertId> experts) {
  ExpertTree t;
  for (ExpertId e : experts) t.add_child(t.root(), e);
  return t;
}

NodeId ExpertTree::add_child(NodeId parent, ExpertId expert) {
  if (parent < 0 || static_cast<std::size_t>(parent) >= nodes_.size())
    throw std::out_of_range("add_child: unknown parent node " + std::to_string(parent));
  const NodeId id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(TreeNode{id, expert, parent, {}});
  nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
  return id;
}

std::vector<ExpertId> ExpertTree::experts() const {
  std::vector<ExpertId> out;
  std::set<ExpertId> seen;
  for (const auto& n : nodes_)
    if (n.expert && seen.insert(*n.expert).second) out.push_back(*n.expert);
  return out;
}

bool ExpertTree::references(ExpertId expert) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [&](const TreeNode& n) { return n.expert == expert; });
}

std::vector<NodeId> ExpertTree::descendants(NodeId id) const {
  std::vector<NodeId> out;
  std::vector<NodeId> stack(node(id).children.rbegin(), node(id).children.rend());
  while (!stack.empty()) {
    const NodeId n = stack.back();
    stack.pop_back();
    out.push_back(n);
    const auto& ch = node(n).children;
    stack.insert(stack.end(), ch.rbegin(), ch.rend());
  }
  return out;
}

int ExpertTree::depth(NodeId id) const {
  int d = 0;
  while (id != root()) {
    id = node(id).parent;
    ++d;
  }
  return d;
}

void ExpertTree::validate() const {
  if (nodes_.empty() || nodes_[0].expert || nodes_[0].parent != -1)
    throw std::logic_error("tree: malformed root");
  std::vector<int> visits(nodes_.size(), 0);
  std::vector<NodeId> stack{0};
  while (!stack.empty()) {
    const NodeId n = stack.back();
    stack.pop_back();
    if (++visits[static_cast<std::size_t>(n)] > 1) throw std::logic_error("tree: node reached twice");
    for (NodeId c : node(n).children) {
      if (c <= 0 || static_cast<std::size_t>(c) >= nodes_.size()) throw std::logic_error("tree: bad child id");
      if (node(c).parent != n) throw std::logic_error("tree: parent link mismatch");
      stack.push_back(c);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id != static_cast<NodeId>(i)) throw std::logic_error("tree: node id out of place");
    if (visits[i] != 1) throw std::logic_error("tree: unreachable node " + std::to_string(i));
    if (i > 0 && !nodes_[i].expert) throw std::logic_error("tree: non-root node without expert");
  }
}

bool ExpertTree::operator==(const ExpertTree& other) const {
  if (nodes_.size() != other.nodes_.size()) return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& a = nodes_[i];
    const auto& b = other.nodes_[i];
    if (a.id != b.id || a.expert != b.expert || a.parent != b.parent || a.children != b.children) return false;
  }
  return true;
}

ExpertTree ExpertTree::from_nodes(std::vector<TreeNode> nodes) {
  ExpertTree t;
  t.nodes_ = std::move(nodes);
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------

void PathTally::add(const std::vector<NodeId>& nodes, long count) {
  for (auto& p : paths_) {
    if (p.nodes == nodes) {
      p.count += count;
      return;
    }
  }
  paths_.push_back(TraversalPath{nodes, count});
}

long PathTally::total() const {
  long t = 0;
  for (const auto& p : paths_) t += p.count;
  return t;
}

// ---------------------------------------------------------------------------

RouteResult hge_forward(const ExpertTree& tree, const LossProbe& probe) {
  if (tree.node(tree.root()).children.empty()) throw RoutingError("hge_forward: tree has no experts");
  std::unordered_map<ExpertId, double> cache;
  auto loss_of = [&](ExpertId e) {
    auto it = cache.find(e);
    if (it != cache.end()) return it->second;
    const double l = probe(e);
    cache.emplace(e, l);
    return l;
  };

  RouteResult r;
  NodeId current = tree.root();
  r.path.push_back(current);
  std::optional<ExpertId> best;
  double best_loss = std::numeric_limits<double>::infinity();
  while (true) {
    const auto& children = tree.node(current).children;
    if (children.empty()) break;
    NodeId pick = -1;
    double pick_loss = std::numeric_limits<double>::infinity();
    ExpertId pick_expert = std::numeric_limits<ExpertId>::max();
    for (NodeId c : children) {
      const ExpertId e = *tree.node(c).expert;
      const double l = loss_of(e);
      if (pick < 0 || l < pick_loss || (l == pick_loss && e < pick_expert)) {
        pick = c;
        pick_loss = l;
        pick_expert = e;
      }
    }
    if (!best || pick_loss < best_loss) {
      best = pick_expert;
      best_loss = pick_loss;
      current = pick;
      r.path.push_back(current);
    } else {
      break;
    }
  }
  r.expert = *best;
  r.experts_queried = static_cast<int>(cache.size());
  return r;
}

std::vector<TraversalPath> prune_paths(std::vector<TraversalPath> paths, double threshold) {
  if (paths.empty()) return paths;
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("prune_paths: threshold must lie in (0, 1]");
  std::stable_sort(paths.begin(), paths.end(),
                   [](const TraversalPath& a, const TraversalPath& b) { return a.count > b.count; });
  long total = 0;
  for (const auto& p : paths) total += p.count;
  long running = 0;
  std::size_t keep = paths.size();
  for (std::size_t i = 0; i < paths.size(); ++i) {
    running += paths[i].count;
    // Relative slack so that e.g. 98 vs 0.98 * 100 is not decided by rounding.
    const double excess = static_cast<double>(running) - threshold * static_cast<double>(total);
    if (excess > 1e-9 * static_cast<double>(total)) {
      keep = i + 1;
      break;
    }
  }
  paths.resize(keep);
  return paths;
}

NodeId lca(const ExpertTree& tree, std::span<const TraversalPath> paths) {
  if (paths.empty()) return tree.root();
  std::size_t common = paths.front().nodes.size();
  for (const auto& p : paths) {
    std::size_t i = 0;
    const auto& ref = paths.front().nodes;
    while (i < common && i < p.nodes.size() && p.nodes[i] == ref[i]) ++i;
    common = i;
  }
  if (common == 0) return tree.root();
  return paths.front().nodes[common - 1];
}

Insertion promote_into_tree(ExpertTree& tree, ExpertId expert, std::span<const TraversalPath> paths,
                            double path_threshold, const ReplayProbes& replay_probes, bool pin_to_root) {
  Insertion ins;
  if (pin_to_root || tree.expert_count() <= 1 || paths.empty()) {
    ins.parent = tree.root();
  } else {
    const auto kept = prune_paths(std::vector<TraversalPath>(paths.begin(), paths.end()), path_threshold);
    ins.parent = lca(tree, kept);
  }
  ins.node = tree.add_child(ins.parent, expert);

  std::vector<ExpertId> candidates;
  std::set<ExpertId> seen;
  for (NodeId n : tree.descendants(ins.parent)) {
    if (n == ins.node) continue;
    const ExpertId e = *tree.node(n).expert;
    if (e == expert) continue;
    if (seen.insert(e).second) candidates.push_back(e);
  }
  for (ExpertId masked : candidates) {
    for (const auto& probe : replay_probes(masked)) {
      if (hge_forward(tree, probe).expert == expert) {
        ins.backward_nodes.push_back(tree.add_child(ins.node, masked));
        break;
      }
    }
  }
  return ins;
}

// ---------------------------------------------------------------------------

namespace {

// Okabe-Ito palette; cycles for more than eight domains.
constexpr std::array<const char*, 8> kPalette = {"#E69F00", "#56B4E9", "#009E73", "#F0E442",
                                                 "#0072B2", "#D55E00", "#CC79A7", "#999999"};

}  // namespace

std::string to_dot(const ExpertTree& tree, const std::map<ExpertId, int>* domains) {
  std::ostringstream os;
  os << "digraph experts {\n";
  for (const auto& n : tree.nodes()) {
    os << "  n" << n.id << " [label=\"";
    if (n.expert)
      os << 'e' << *n.expert;
    else
      os << "root";
    os << '"';
    if (domains && n.expert) {
      auto it = domains->find(*n.expert);
      if (it != domains->end()) {
        const auto idx = static_cast<std::size_t>(it->second) % kPalette.size();
        os << ", style=filled, fillcolor=\"" << kPalette[idx] << '"';
      }
    }
    os << "];\n";
  }
  for (const auto& n : tree.nodes())
    for (NodeId c : n.children) os << "  n" << n.id << " -> n" << c << ";\n";
  os << "}\n";
  return os.str();
}

std::string tree_to_json(const ExpertTree& tree, const std::map<ExpertId, int>* domains) {
  nlohmann::json j;
  j["root"] = tree.root();
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : tree.nodes()) {
    nlohmann::json node{{"id", n.id}, {"parent", n.parent}, {"children", n.children}};
    node["expert"] = n.expert ? nlohmann::json(*n.expert) : nlohmann::json(nullptr);
    j["nodes"].push_back(std::move(node));
  }
  if (domains) {
    nlohmann::json d = nlohmann::json::object();
    for (const auto& [e, dom] : *domains) d[std::to_string(e)] = dom;
    j["domains"] = std::move(d);
  }
  return j.dump(2);
}

ExpertTree tree_from_json(const std::string& text, std::map<ExpertId, int>* domains) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError(std::string("tree snapshot: ") + e.what(), e.byte);
  }
  try {
    std::vector<TreeNode> nodes;
    for (const auto& n : j.at("nodes")) {
      TreeNode t;
      t.id = n.at("id").get<NodeId>();
      t.parent = n.at("parent").get<NodeId>();
      t.children = n.at("children").get<std::vector<NodeId>>();
      if (!n.at("expert").is_null()) t.expert = n.at("expert").get<ExpertId>();
      nodes.push_back(std::move(t));
    }
    if (domains && j.contains("domains")) {
      domains->clear();
      for (const auto& [k, v] : j["domains"].items()) (*domains)[std::stoi(k)] = v.get<int>();
    }
    return ExpertTree::from_nodes(std::move(nodes));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("tree snapshot: ") + e.what(), 0);
  } catch (const std::logic_error& e) {
    throw IngestionError(std::string("tree snapshot: ") + e.what(), 0);
  }
}

}  // namespace hge
