#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <vector>

#include "atlas/map.hpp"

namespace atlas {

/// Sparse tf-idf bag-of-words vector, L1-normalized.
struct BowVector {
  std::map<int, double> weights;

  double l1_similarity(const BowVector& other) const;
};

/// Hierarchical k-medoids vocabulary over 256-bit descriptors.
class VocabularyTree {
 public:
  struct Node {
    Descriptor centroid;
    std::vector<int> children;  // empty for leaves
    int word_id = -1;           // >= 0 for leaves
  };

  int branching = 10;
  int depth = 3;

  int word_count() const { return int(idf_.size()); }
  const std::vector<Node>& nodes() const { return nodes_; }
  double idf(int word) const { return idf_[word]; }

  /// Leaf word for a descriptor (greedy descent).
  int quantize(const Descriptor& d) const;

  BowVector bow(const std::vector<Descriptor>& descriptors) const;

  void save(std::ostream& os) const;
  static VocabularyTree load(std::istream& is);
  void save_file(const std::string& path) const;
  static VocabularyTree load_file(const std::string& path);

  friend VocabularyTree build_vocabulary(const std::vector<Descriptor>&, int,
                                         int, std::uint64_t);

 private:
  std::vector<Node> nodes_;  // nodes_[0] is the root
  std::vector<double> idf_;
};

VocabularyTree build_vocabulary(const std::vector<Descriptor>& sample, int k,
                                int depth, std::uint64_t seed);

enum class CandidateKind { LoopClosure, MapMerge };

struct PlaceCandidate {
  MapId map_id = 0;
  KfId keyframe_id = 0;
  double score = 0.0;
  CandidateKind kind = CandidateKind::LoopClosure;
};

struct QueryOptions {
  double relative_threshold = 0.3;  // fraction of best covisible score
  double min_score = 0.02;
  int max_results = 10;
};

/// Inverted-index keyframe database, unique across all maps of the atlas.
class RecognitionDatabase {
 public:
  explicit RecognitionDatabase(VocabularyTree vocab);

  const VocabularyTree& vocabulary() const { return vocab_; }

  void index_keyframe(MapId map_id, const KeyFrame& kf);
  void remove_keyframe(KfId kf_id);
  /// Rewrites entries of two retired maps to their merged successor.
  void rehome_maps(MapId merged, MapId a, MapId b);

  bool contains(KfId kf_id) const { return entries_.count(kf_id) > 0; }
  std::size_t size() const { return entries_.size(); }

  /// Ranked candidates from all maps. `exclude` (covisible keyframes of the
  /// querying frame) are filtered out; their best score also sets the
  /// relative acceptance threshold.
  std::vector<PlaceCandidate> query(const std::vector<Descriptor>& descriptors,
                                    MapId active_map,
                                    const std::set<KfId>& exclude,
                                    const QueryOptions& opts = {}) const;

  /// Brute-force ranking over every indexed keyframe; test oracle.
  std::vector<PlaceCandidate> brute_force_query(
      const std::vector<Descriptor>& descriptors, MapId active_map) const;

  double stored_score(KfId kf_id, const BowVector& v) const;

 private:
  struct Entry {
    MapId map_id;
    BowVector bow;
  };
  VocabularyTree vocab_;
  std::map<KfId, Entry> entries_;
  std::map<int, std::set<KfId>> inverted_;  // word -> keyframes
};

/// Repeated place recognition over the last three covisibly-connected
/// keyframes of the active map; confirms a candidate only when all three
/// retrieve mutually covisible keyframes in the same candidate map.
std::optional<PlaceCandidate> confirm_common_region(
    const RecognitionDatabase& db, const Atlas& atlas,
    const std::vector<KfId>& recent, const QueryOptions& opts = {});

}  // namespace atlas
