#include "xfnc/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>

#include <json.hpp>

#include "xfnc/error.hpp"
#include "xfnc/rng.hpp"

namespace xfnc {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view token, T& out) {
  token = trim(token);
  if (token.empty()) return false;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void append_double(std::string& buf, double v) {
  char tmp[32];
  auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof tmp, v);
  buf.append(tmp, ptr);
}

}  // namespace

Graph Graph::build(std::size_t num_nodes, std::span<const std::pair<NodeId, NodeId>> edges,
                   Matrix features, std::vector<ClassId> labels, ClassSplits splits) {
  if (static_cast<std::size_t>(features.rows()) != num_nodes) {
    throw Error("feature matrix has " + std::to_string(features.rows()) + " rows, expected " +
                std::to_string(num_nodes));
  }
  if (labels.size() != num_nodes) {
    throw Error("label vector has " + std::to_string(labels.size()) + " entries, expected " +
                std::to_string(num_nodes));
  }
  if (!features.allFinite()) throw Error("feature matrix contains non-finite values");

  std::unordered_map<ClassId, int> split_of;
  auto register_split = [&](const std::vector<ClassId>& ids, int which, const char* name) {
    for (ClassId c : ids) {
      if (c < 0) throw Error(std::string("negative class id in split ") + name);
      auto [it, inserted] = split_of.emplace(c, which);
      if (!inserted) {
        throw Error("class " + std::to_string(c) + " appears in more than one split entry");
      }
    }
  };
  register_split(splits.train, 0, "train");
  register_split(splits.val, 1, "val");
  register_split(splits.test, 2, "test");

  for (std::size_t v = 0; v < num_nodes; ++v) {
    if (labels[v] == kUnlabeled) continue;
    if (!split_of.contains(labels[v])) {
      throw Error("node " + std::to_string(v) + " has class " + std::to_string(labels[v]) +
                  " which is in no split");
    }
  }

  std::vector<std::pair<NodeId, NodeId>> directed;
  directed.reserve(edges.size() * 2);
  for (auto [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw Error("edge (" + std::to_string(u) + "," + std::to_string(v) +
                  ") references a node outside [0," + std::to_string(num_nodes) + ")");
    }
    if (u == v) continue;
    directed.emplace_back(u, v);
    directed.emplace_back(v, u);
  }
  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

  Graph g;
  g.offsets_.assign(num_nodes + 1, 0);
  for (auto [u, v] : directed) ++g.offsets_[u + 1];
  for (std::size_t i = 0; i < num_nodes; ++i) g.offsets_[i + 1] += g.offsets_[i];
  g.neighbors_.reserve(directed.size());
  for (auto [u, v] : directed) g.neighbors_.push_back(v);
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);
  g.splits_ = std::move(splits);

  std::map<ClassId, std::vector<NodeId>> members;
  for (auto [c, which] : split_of) members[c];
  for (std::size_t v = 0; v < num_nodes; ++v) {
    if (g.labels_[v] != kUnlabeled) members[g.labels_[v]].push_back(static_cast<NodeId>(v));
  }
  g.members_.assign(members.begin(), members.end());
  return g;
}

bool Graph::has_edge(NodeId u, NodeId v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

std::span<const NodeId> Graph::members(ClassId c) const {
  auto it = std::lower_bound(members_.begin(), members_.end(), c,
                             [](const auto& entry, ClassId key) { return entry.first < key; });
  if (it == members_.end() || it->first != c) return {};
  return it->second;
}

std::vector<std::pair<NodeId, NodeId>> Graph::edge_list() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  out.reserve(num_edges());
  for (NodeId u = 0; u < num_nodes(); ++u) {
    for (NodeId v : neighbors(u)) {
      if (u < v) out.emplace_back(u, v);
    }
  }
  return out;
}

bool Graph::operator==(const Graph& other) const {
  return offsets_ == other.offsets_ && neighbors_ == other.neighbors_ &&
         features_.rows() == other.features_.rows() &&
         features_.cols() == other.features_.cols() && features_ == other.features_ &&
         labels_ == other.labels_ && splits_ == other.splits_;
}

GraphFiles GraphFiles::in_dir(const std::filesystem::path& dir) {
  return {dir / "edges.txt", dir / "features.csv", dir / "labels.tsv", dir / "splits.json"};
}

Graph load_graph(const GraphFiles& files) {
  // Features first: they fix num_nodes and d.
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t dim = 0;
  {
    auto in = open_in(files.features);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view view = trim(line);
      if (view.empty()) continue;
      std::size_t count = 0;
      std::size_t pos = 0;
      while (true) {
        const std::size_t comma = view.find(',', pos);
        const auto token = view.substr(pos, comma == std::string_view::npos ? view.npos : comma - pos);
        double x;
        if (!parse_number(token, x)) {
          throw ParseError(files.features.string(), lineno,
                           "bad feature value '" + std::string(trim(token)) + "'");
        }
        values.push_back(x);
        ++count;
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
      if (rows == 0) {
        dim = count;
      } else if (count != dim) {
        throw ParseError(files.features.string(), lineno,
                         "row has " + std::to_string(count) + " features, expected " +
                             std::to_string(dim));
      }
      ++rows;
    }
  }
  Matrix features(rows, dim);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < dim; ++j) features(i, j) = values[i * dim + j];
  }

  std::vector<std::pair<NodeId, NodeId>> edges;
  {
    auto in = open_in(files.edges);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto tokens = split_ws(line);
      if (tokens.empty()) continue;
      std::uint64_t u, v;
      if (tokens.size() != 2 || !parse_number(tokens[0], u) || !parse_number(tokens[1], v)) {
        throw ParseError(files.edges.string(), lineno, "expected two non-negative node ids");
      }
      if (u >= rows || v >= rows) {
        throw ParseError(files.edges.string(), lineno,
                         "node id out of range (graph has " + std::to_string(rows) + " nodes)");
      }
      edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }
  }

  ClassSplits splits;
  {
    auto in = open_in(files.splits);
    nlohmann::json doc;
    try {
      in >> doc;
      splits.train = doc.at("train").get<std::vector<ClassId>>();
      splits.val = doc.at("val").get<std::vector<ClassId>>();
      splits.test = doc.at("test").get<std::vector<ClassId>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(files.splits.string() + ": " + e.what());
    }
  }
  std::set<ClassId> known(splits.train.begin(), splits.train.end());
  known.insert(splits.val.begin(), splits.val.end());
  known.insert(splits.test.begin(), splits.test.end());

  std::vector<ClassId> labels(rows, kUnlabeled);
  {
    auto in = open_in(files.labels);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto tokens = split_ws(line);
      if (tokens.empty()) continue;
      std::uint64_t node;
      ClassId c;
      if (tokens.size() != 2 || !parse_number(tokens[0], node) || !parse_number(tokens[1], c)) {
        throw ParseError(files.labels.string(), lineno, "expected 'node_id<TAB>class_id'");
      }
      if (node >= rows) throw ParseError(files.labels.string(), lineno, "node id out of range");
      if (!known.contains(c)) {
        throw ParseError(files.labels.string(), lineno,
                         "class " + std::to_string(c) + " is not listed in any split");
      }
      labels[node] = c;
    }
  }

  return Graph::build(rows, edges, std::move(features), std::move(labels), std::move(splits));
}

void dump_graph(const Graph& g, const GraphFiles& files) {
  {
    auto out = open_out(files.edges);
    for (auto [u, v] : g.edge_list()) out << u << ' ' << v << '\n';
  }
  {
    auto out = open_out(files.features);
    std::string buf;
    const Matrix& x = g.features();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      buf.clear();
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (j) buf.push_back(',');
        append_double(buf, x(i, j));
      }
      buf.push_back('\n');
      out << buf;
    }
  }
  {
    auto out = open_out(files.labels);
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
      if (g.label(v) != kUnlabeled) out << v << '\t' << g.label(v) << '\n';
    }
  }
  {
    auto out = open_out(files.splits);
    nlohmann::json doc = {
        {"train", g.splits().train}, {"val", g.splits().val}, {"test", g.splits().test}};
    out << doc.dump() << '\n';
  }
}

Graph generate_sbm(const SbmParams& p) {
  if (p.classes == 0 || p.nodes_per_class == 0 || p.feature_dim == 0) {
    throw Error("generate_sbm: counts must be positive");
  }
  if (!(0.0 <= p.p_out && p.p_out <= p.p_in && p.p_in <= 1.0)) {
    throw Error("generate_sbm: need 0 <= p_out <= p_in <= 1");
  }
  if (p.noise_std < 0.0) throw Error("generate_sbm: noise_std must be non-negative");
  if (p.feature_dim < p.classes) {
    throw Error("generate_sbm: feature_dim must be at least the number of classes");
  }
  const std::size_t split_total = p.train_classes + p.val_classes + p.test_classes;
  if (split_total != 0 && split_total != p.classes) {
    throw Error("generate_sbm: split class counts must sum to the class count");
  }

  const std::size_t n = p.classes * p.nodes_per_class;
  Rng rng(p.seed, {stream::kGenerator});

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const bool same = u / p.nodes_per_class == v / p.nodes_per_class;
      if (rng.bernoulli(same ? p.p_in : p.p_out)) {
        edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
      }
    }
  }

  const std::size_t block = p.feature_dim / p.classes;
  const double level = 1.0 / std::sqrt(static_cast<double>(block));
  Matrix features(n, p.feature_dim);
  std::vector<ClassId> labels(n);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t c = v / p.nodes_per_class;
    labels[v] = static_cast<ClassId>(c);
    for (std::size_t j = 0; j < p.feature_dim; ++j) {
      const double mean = (j >= c * block && j < (c + 1) * block) ? level : 0.0;
      features(v, j) = mean + p.noise_std * rng.normal();
    }
  }

  ClassSplits splits;
  if (split_total == 0) {
    for (std::size_t c = 0; c < p.classes; ++c) splits.train.push_back(static_cast<ClassId>(c));
  } else {
    std::vector<ClassId>* lists[3] = {&splits.train, &splits.val, &splits.test};
    const std::size_t quota[3] = {p.train_classes, p.val_classes, p.test_classes};
    std::size_t next = 0;
    for (std::size_t c = 0; c < p.classes; ++c) {
      while (lists[next]->size() >= quota[next]) next = (next + 1) % 3;
      lists[next]->push_back(static_cast<ClassId>(c));
      next = (next + 1) % 3;
    }
  }
  return Graph::build(n, edges, std::move(features), std::move(labels), std::move(splits));
}

std::vector<NodeId> k_hop_neighbors(const Graph& g, NodeId node, std::size_t k) {
  const NodeId sources[1] = {node};
  return k_hop_neighbors(g, sources, k);
}

std::vector<NodeId> k_hop_neighbors(const Graph& g, std::span<const NodeId> sources,
                                    std::size_t k) {
  std::vector<char> hit(g.num_nodes(), 0);
  std::vector<NodeId> frontier;
  std::vector<NodeId> touched;
  for (NodeId s : sources) {
    if (s >= g.num_nodes()) throw Error("node " + std::to_string(s) + " out of range");
    std::unordered_map<NodeId, std::size_t> dist{{s, 0}};
    frontier.assign(1, s);
    for (std::size_t level = 1; level <= k && !frontier.empty(); ++level) {
      std::vector<NodeId> next;
      for (NodeId u : frontier) {
        for (NodeId v : g.neighbors(u)) {
          if (dist.emplace(v, level).second) {
            next.push_back(v);
            if (!hit[v]) {
              hit[v] = 1;
              touched.push_back(v);
            }
          }
        }
      }
      frontier.swap(next);
    }
  }
  std::sort(touched.begin(), touched.end());
  return touched;
}

Matrix induced_adjacency(const Graph& g, std::span<const NodeId> nodes) {
  const auto n = static_cast<Eigen::Index>(nodes.size());
  Matrix a = Matrix::Zero(n, n);
  std::unordered_map<NodeId, Eigen::Index> local;
  local.reserve(nodes.size());
  for (Eigen::Index i = 0; i < n; ++i) local.emplace(nodes[i], i);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (NodeId v : g.neighbors(nodes[i])) {
      auto it = local.find(v);
      if (it != local.end()) a(i, it->second) = 1.0;
    }
  }
  return a;
}

EgoSubgraph ego_subgraph(const Graph& g, NodeId node) {
  if (node >= g.num_nodes()) throw Error("node " + std::to_string(node) + " out of range");
  EgoSubgraph ego;
  ego.center = 0;
  ego.global_ids.push_back(node);
  for (NodeId v : k_hop_neighbors(g, node, 2)) ego.global_ids.push_back(v);
  ego.adjacency = induced_adjacency(g, ego.global_ids);
  ego.features.resize(static_cast<Eigen::Index>(ego.global_ids.size()), g.features().cols());
  for (std::size_t i = 0; i < ego.global_ids.size(); ++i) {
    ego.features.row(static_cast<Eigen::Index>(i)) = g.features().row(ego.global_ids[i]);
  }
  return ego;
}

}  // namespace xfnc
