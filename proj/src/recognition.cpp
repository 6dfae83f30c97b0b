#include "atlas/recognition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace atlas {

double BowVector::l1_similarity(const BowVector& other) const {
  // 1 - 0.5 * |v - w|_1 for L1-normalized vectors; in [0, 1].
  double dist = 0.0;
  auto it = weights.begin();
  auto jt = other.weights.begin();
  while (it != weights.end() || jt != other.weights.end()) {
    if (jt == other.weights.end() ||
        (it != weights.end() && it->first < jt->first)) {
      dist += it->second;
      ++it;
    } else if (it == weights.end() || jt->first < it->first) {
      dist += jt->second;
      ++jt;
    } else {
      dist += std::abs(it->second - jt->second);
      ++it;
      ++jt;
    }
  }
  return std::max(0.0, 1.0 - 0.5 * dist);
}

namespace {

// Deterministic k-medoids under Hamming distance. Ties break toward the
// lower medoid index / lexicographically smaller descriptor.
std::vector<int> k_medoids(const std::vector<Descriptor>& descs,
                           const std::vector<int>& subset, int k,
                           std::mt19937_64& rng,
                           std::vector<Descriptor>* medoids_out) {
  std::vector<int> unique_ids;
  {
    std::set<Descriptor> seen;
    for (int i : subset)
      if (seen.insert(descs[i]).second) unique_ids.push_back(i);
  }
  const int n_clusters = std::min<int>(k, int(unique_ids.size()));

  std::vector<Descriptor> medoids;
  std::vector<int> pool = unique_ids;
  std::shuffle(pool.begin(), pool.end(), rng);
  for (int i = 0; i < n_clusters; ++i) medoids.push_back(descs[pool[i]]);

  std::vector<int> assign(subset.size(), 0);
  for (int iter = 0; iter < 10; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      int best = 0, best_d = hamming(descs[subset[i]], medoids[0]);
      for (int c = 1; c < n_clusters; ++c) {
        const int d = hamming(descs[subset[i]], medoids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (iter > 0 && !changed) break;

    for (int c = 0; c < n_clusters; ++c) {
      std::vector<int> members;
      for (std::size_t i = 0; i < subset.size(); ++i)
        if (assign[i] == c) members.push_back(subset[i]);
      if (members.empty()) continue;
      long best_sum = -1;
      Descriptor best_medoid = medoids[c];
      for (int m : members) {
        long sum = 0;
        for (int o : members) sum += hamming(descs[m], descs[o]);
        if (best_sum < 0 || sum < best_sum ||
            (sum == best_sum && descs[m] < best_medoid)) {
          best_sum = sum;
          best_medoid = descs[m];
        }
      }
      medoids[c] = best_medoid;
    }
  }
  *medoids_out = medoids;
  return assign;
}

}  // namespace

VocabularyTree build_vocabulary(const std::vector<Descriptor>& sample, int k,
                                int depth, std::uint64_t seed) {
  if (sample.empty())
    throw std::invalid_argument("build_vocabulary: empty sample");
  VocabularyTree tree;
  tree.branching = k;
  tree.depth = depth;

  std::mt19937_64 rng(seed);
  tree.nodes_.push_back({});  // root

  std::vector<int> word_counts;  // training hits per leaf

  // Iterative DFS split; recursion depth is tiny but explicit stack keeps
  // node ids in a deterministic order.
  struct Task {
    int node;
    std::vector<int> subset;
    int level;
  };
  std::vector<int> all(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) all[i] = int(i);
  std::vector<Task> stack{{0, all, 0}};
  while (!stack.empty()) {
    Task t = std::move(stack.back());
    stack.pop_back();
    auto& node = tree.nodes_[t.node];
    if (t.level == depth || t.subset.size() <= 1) {
      node.word_id = int(word_counts.size());
      word_counts.push_back(int(t.subset.size()));
      continue;
    }
    std::vector<Descriptor> medoids;
    std::vector<int> assign = k_medoids(sample, t.subset, k, rng, &medoids);
    if (medoids.size() <= 1) {
      node.word_id = int(word_counts.size());
      word_counts.push_back(int(t.subset.size()));
      continue;
    }
    std::vector<Task> children;
    for (std::size_t c = 0; c < medoids.size(); ++c) {
      const int child_id = int(tree.nodes_.size());
      tree.nodes_.push_back({});
      tree.nodes_[child_id].centroid = medoids[c];
      tree.nodes_[t.node].children.push_back(child_id);
      Task ct{child_id, {}, t.level + 1};
      for (std::size_t i = 0; i < t.subset.size(); ++i)
        if (assign[i] == int(c)) ct.subset.push_back(t.subset[i]);
      children.push_back(std::move(ct));
    }
    // push in reverse so children are processed in order
    for (auto it = children.rbegin(); it != children.rend(); ++it)
      stack.push_back(std::move(*it));
  }

  const double n = double(sample.size());
  tree.idf_.resize(word_counts.size());
  for (std::size_t w = 0; w < word_counts.size(); ++w)
    tree.idf_[w] =
        word_counts[w] > 0 ? std::log(n / double(word_counts[w])) : 0.0;
  return tree;
}

int VocabularyTree::quantize(const Descriptor& d) const {
  int node = 0;
  while (!nodes_[node].children.empty()) {
    int best = nodes_[node].children[0];
    int best_d = hamming(d, nodes_[best].centroid);
    for (std::size_t i = 1; i < nodes_[node].children.size(); ++i) {
      const int c = nodes_[node].children[i];
      const int dist = hamming(d, nodes_[c].centroid);
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    node = best;
  }
  return nodes_[node].word_id;
}

BowVector VocabularyTree::bow(const std::vector<Descriptor>& descriptors) const {
  std::map<int, int> tf;
  for (const auto& d : descriptors) ++tf[quantize(d)];
  BowVector v;
  double total = 0.0;
  for (const auto& [w, count] : tf) {
    const double weight = double(count) * idf_[w];
    if (weight > 0) {
      v.weights[w] = weight;
      total += weight;
    }
  }
  if (total <= 0) {
    // Degenerate vocabulary (all idf zero): fall back to plain tf.
    for (const auto& [w, count] : tf) {
      v.weights[w] = double(count);
      total += double(count);
    }
  }
  if (total > 0)
    for (auto& [w, weight] : v.weights) weight /= total;
  return v;
}

void VocabularyTree::save(std::ostream& os) const {
  os.write("ATLSVOC1", 8);
  auto put = [&os](auto v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put(std::int32_t(branching));
  put(std::int32_t(depth));
  put(std::uint64_t(nodes_.size()));
  for (const auto& n : nodes_) {
    for (auto w : n.centroid.words) put(w);
    put(std::int32_t(n.word_id));
    put(std::uint32_t(n.children.size()));
    for (int c : n.children) put(std::int32_t(c));
  }
  put(std::uint64_t(idf_.size()));
  for (double w : idf_) put(w);
}

VocabularyTree VocabularyTree::load(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "ATLSVOC1")
    throw std::runtime_error("vocabulary: bad magic");
  auto get = [&is](auto& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("vocabulary: truncated");
  };
  VocabularyTree t;
  std::int32_t k, L;
  get(k);
  get(L);
  t.branching = k;
  t.depth = L;
  std::uint64_t n_nodes;
  get(n_nodes);
  t.nodes_.resize(n_nodes);
  for (auto& n : t.nodes_) {
    for (auto& w : n.centroid.words) get(w);
    std::int32_t wid;
    get(wid);
    n.word_id = wid;
    std::uint32_t nc;
    get(nc);
    n.children.resize(nc);
    for (auto& c : n.children) {
      std::int32_t ci;
      get(ci);
      c = ci;
    }
  }
  std::uint64_t n_words;
  get(n_words);
  t.idf_.resize(n_words);
  for (auto& w : t.idf_) get(w);
  return t;
}

void VocabularyTree::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("vocabulary: cannot open " + path);
  save(os);
}

VocabularyTree VocabularyTree::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("vocabulary: cannot open " + path);
  return load(is);
}

// ---------------------------------------------------------------------------

RecognitionDatabase::RecognitionDatabase(VocabularyTree vocab)
    : vocab_(std::move(vocab)) {}

void RecognitionDatabase::index_keyframe(MapId map_id, const KeyFrame& kf) {
  std::vector<Descriptor> descs;
  descs.reserve(kf.measurements.size());
  for (const auto& m : kf.measurements) descs.push_back(m.descriptor);
  Entry e{map_id, vocab_.bow(descs)};
  for (const auto& [w, _] : e.bow.weights) inverted_[w].insert(kf.id);
  entries_[kf.id] = std::move(e);
}

void RecognitionDatabase::remove_keyframe(KfId kf_id) {
  auto it = entries_.find(kf_id);
  if (it == entries_.end()) return;
  for (const auto& [w, _] : it->second.bow.weights) {
    auto wit = inverted_.find(w);
    if (wit != inverted_.end()) {
      wit->second.erase(kf_id);
      if (wit->second.empty()) inverted_.erase(wit);
    }
  }
  entries_.erase(it);
}

void RecognitionDatabase::rehome_maps(MapId merged, MapId a, MapId b) {
  for (auto& [_, e] : entries_)
    if (e.map_id == a || e.map_id == b) e.map_id = merged;
}

double RecognitionDatabase::stored_score(KfId kf_id, const BowVector& v) const {
  auto it = entries_.find(kf_id);
  if (it == entries_.end()) return 0.0;
  return it->second.bow.l1_similarity(v);
}

std::vector<PlaceCandidate> RecognitionDatabase::query(
    const std::vector<Descriptor>& descriptors, MapId active_map,
    const std::set<KfId>& exclude, const QueryOptions& opts) const {
  std::vector<PlaceCandidate> out;
  if (entries_.empty() || descriptors.empty()) return out;
  const BowVector v = vocab_.bow(descriptors);

  // Candidates: keyframes sharing at least one word.
  std::set<KfId> candidates;
  for (const auto& [w, _] : v.weights) {
    auto it = inverted_.find(w);
    if (it == inverted_.end()) continue;
    candidates.insert(it->second.begin(), it->second.end());
  }

  // Relative threshold anchored on the best covisible (excluded) score.
  double ref = 0.0;
  for (KfId id : exclude) ref = std::max(ref, stored_score(id, v));
  const double threshold = std::max(opts.min_score, opts.relative_threshold * ref);

  for (KfId id : candidates) {
    if (exclude.count(id)) continue;
    const Entry& e = entries_.at(id);
    const double score = e.bow.l1_similarity(v);
    if (score < threshold) continue;
    PlaceCandidate c;
    c.map_id = e.map_id;
    c.keyframe_id = id;
    c.score = score;
    c.kind = e.map_id == active_map ? CandidateKind::LoopClosure
                                    : CandidateKind::MapMerge;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.keyframe_id < b.keyframe_id;
  });
  if (int(out.size()) > opts.max_results) out.resize(opts.max_results);
  return out;
}

std::vector<PlaceCandidate> RecognitionDatabase::brute_force_query(
    const std::vector<Descriptor>& descriptors, MapId active_map) const {
  const BowVector v = vocab_.bow(descriptors);
  std::vector<PlaceCandidate> out;
  for (const auto& [id, e] : entries_) {
    PlaceCandidate c;
    c.map_id = e.map_id;
    c.keyframe_id = id;
    c.score = e.bow.l1_similarity(v);
    c.kind = e.map_id == active_map ? CandidateKind::LoopClosure
                                    : CandidateKind::MapMerge;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.keyframe_id < b.keyframe_id;
  });
  return out;
}

std::optional<PlaceCandidate> confirm_common_region(
    const RecognitionDatabase& db, const Atlas& atlas,
    const std::vector<KfId>& recent, const QueryOptions& opts) {
  if (recent.size() < 3) return std::nullopt;
  const std::vector<KfId> window(recent.end() - 3, recent.end());
  const SubMap& active = atlas.map(atlas.active_map_id());

  // Per-window-keyframe candidate lists grouped by map.
  std::map<MapId, std::array<std::vector<PlaceCandidate>, 3>> by_map;
  for (int i = 0; i < 3; ++i) {
    const KeyFrame& kf = active.keyframe(window[i]);
    std::set<KfId> exclude(window.begin(), window.end());
    for (const auto& [n, _] : active.covisibility_neighbors(window[i]))
      exclude.insert(n);
    std::vector<Descriptor> descs;
    for (const auto& m : kf.measurements) descs.push_back(m.descriptor);
    for (const auto& c :
         db.query(descs, atlas.active_map_id(), exclude, opts))
      by_map[c.map_id][i].push_back(c);
  }

  auto mutually_covisible = [&](MapId map_id, KfId a, KfId b) {
    if (a == b) return true;
    const SubMap& m = atlas.map(map_id);
    return m.shared_point_count(a, b) >= m.covisibility_threshold;
  };

  std::optional<PlaceCandidate> best;
  for (const auto& [map_id, lists] : by_map) {
    if (lists[0].empty() || lists[1].empty() || lists[2].empty()) continue;
    for (const auto& c0 : lists[0])
      for (const auto& c1 : lists[1])
        for (const auto& c2 : lists[2]) {
          if (!mutually_covisible(map_id, c0.keyframe_id, c1.keyframe_id) ||
              !mutually_covisible(map_id, c0.keyframe_id, c2.keyframe_id) ||
              !mutually_covisible(map_id, c1.keyframe_id, c2.keyframe_id))
            continue;
          // Report the match of the most recent keyframe.
          if (!best || c2.score > best->score) best = c2;
        }
  }
  return best;
}

}  // namespace atlas
