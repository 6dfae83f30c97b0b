#include <doctest.h>

#include <random>
#include <sstream>

#include "atlas/recognition.hpp"
#include "test_helpers.hpp"

using namespace atlas;
using namespace atlas::testutil;

namespace {

std::vector<Descriptor> sample_descriptors(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Descriptor> out;
  for (int i = 0; i < n; ++i) out.push_back(random_descriptor(rng));
  return out;
}

KeyFrame keyframe_with(KfId id, const std::vector<Descriptor>& ds) {
  KeyFrame kf;
  kf.id = id;
  for (const auto& d : ds) {
    FrameMeasurement m;
    m.descriptor = d;
    kf.measurements.push_back(m);
  }
  return kf;
}

}  // namespace

TEST_CASE("vocabulary build is deterministic and covers the sample") {
  const auto sample = sample_descriptors(300, 99);
  const VocabularyTree v1 = build_vocabulary(sample, 5, 2, 42);
  const VocabularyTree v2 = build_vocabulary(sample, 5, 2, 42);
  CHECK(v1.word_count() > 1);
  CHECK(v1.word_count() == v2.word_count());
  for (const auto& d : sample) CHECK(v1.quantize(d) == v2.quantize(d));

  // Quantization descends to the nearest centroid chain; every leaf id used.
  std::set<int> words;
  for (const auto& d : sample) words.insert(v1.quantize(d));
  CHECK(int(words.size()) > v1.word_count() / 2);
}

TEST_CASE("vocabulary serialization round trip") {
  const auto sample = sample_descriptors(200, 5);
  const VocabularyTree v = build_vocabulary(sample, 4, 2, 7);
  std::ostringstream os;
  v.save(os);
  std::istringstream is(os.str());
  const VocabularyTree back = VocabularyTree::load(is);
  CHECK(back.word_count() == v.word_count());
  for (const auto& d : sample) {
    CHECK(back.quantize(d) == v.quantize(d));
    CHECK(back.idf(back.quantize(d)) == v.idf(v.quantize(d)));
  }
}

TEST_CASE("bow vectors are L1-normalized and similarity is bounded") {
  const auto sample = sample_descriptors(400, 12);
  const VocabularyTree v = build_vocabulary(sample, 6, 2, 3);
  const std::vector<Descriptor> frame(sample.begin(), sample.begin() + 40);
  const BowVector b = v.bow(frame);
  double l1 = 0.0;
  for (const auto& [w, x] : b.weights) l1 += std::abs(x);
  CHECK(l1 == doctest::Approx(1.0));
  CHECK(b.l1_similarity(b) == doctest::Approx(1.0));
  const BowVector other =
      v.bow({sample.begin() + 200, sample.begin() + 240});
  const double s = b.l1_similarity(other);
  CHECK(s >= 0.0);
  CHECK(s <= 1.0);
}

TEST_CASE("database query agrees with the brute-force oracle") {
  const auto sample = sample_descriptors(600, 77);
  const VocabularyTree v = build_vocabulary(sample, 8, 2, 1);
  RecognitionDatabase db(v);

  std::mt19937_64 rng(31);
  std::vector<std::vector<Descriptor>> frames;
  for (int k = 0; k < 12; ++k) {
    std::vector<Descriptor> ds;
    for (int i = 0; i < 30; ++i)
      ds.push_back(sample[std::uniform_int_distribution<int>(
          0, int(sample.size()) - 1)(rng)]);
    frames.push_back(ds);
    db.index_keyframe(1, keyframe_with(KfId(k + 1), ds));
  }
  CHECK(db.size() == 12);

  // Query with a frame similar to keyframe 4 (subset + fresh noise).
  std::vector<Descriptor> query(frames[3].begin(), frames[3].begin() + 25);
  for (int i = 0; i < 5; ++i) query.push_back(random_descriptor(rng));

  const auto oracle = db.brute_force_query(query, MapId(2));
  REQUIRE(!oracle.empty());
  CHECK(oracle.front().keyframe_id == 4);

  QueryOptions opts;
  opts.min_score = 0.0;
  opts.relative_threshold = 0.0;
  const auto got = db.query(query, MapId(2), {}, opts);
  REQUIRE(!got.empty());
  CHECK(got.front().keyframe_id == oracle.front().keyframe_id);
  CHECK(got.front().score == doctest::Approx(oracle.front().score));
  // Inverted-index scores match the exhaustive scores for every result.
  for (const auto& c : got) {
    const auto it = std::find_if(
        oracle.begin(), oracle.end(),
        [&](const PlaceCandidate& o) { return o.keyframe_id == c.keyframe_id; });
    REQUIRE(it != oracle.end());
    CHECK(c.score == doctest::Approx(it->score));
  }
}

TEST_CASE("query labels candidates by map and honors exclusions") {
  const auto sample = sample_descriptors(500, 13);
  const VocabularyTree v = build_vocabulary(sample, 6, 2, 9);
  RecognitionDatabase db(v);
  const std::vector<Descriptor> place(sample.begin(), sample.begin() + 30);
  db.index_keyframe(1, keyframe_with(1, place));  // active map
  db.index_keyframe(2, keyframe_with(2, place));  // other map

  QueryOptions opts;
  opts.min_score = 0.0;
  opts.relative_threshold = 0.0;
  const auto got = db.query(place, MapId(1), {}, opts);
  REQUIRE(got.size() >= 2);
  for (const auto& c : got) {
    if (c.map_id == 1) CHECK(c.kind == CandidateKind::LoopClosure);
    if (c.map_id == 2) CHECK(c.kind == CandidateKind::MapMerge);
  }
  // Excluding keyframe 1 removes it from the results.
  const auto excl = db.query(place, MapId(1), {KfId(1)}, opts);
  for (const auto& c : excl) CHECK(c.keyframe_id != 1);
}

TEST_CASE("remove and rehome keep the index consistent") {
  const auto sample = sample_descriptors(300, 21);
  const VocabularyTree v = build_vocabulary(sample, 5, 2, 2);
  RecognitionDatabase db(v);
  const std::vector<Descriptor> ds(sample.begin(), sample.begin() + 20);
  db.index_keyframe(1, keyframe_with(1, ds));
  db.index_keyframe(2, keyframe_with(2, ds));
  db.remove_keyframe(1);
  CHECK_FALSE(db.contains(1));
  CHECK(db.size() == 1);

  db.rehome_maps(MapId(9), MapId(2), MapId(3));
  QueryOptions opts;
  opts.min_score = 0.0;
  opts.relative_threshold = 0.0;
  const auto got = db.query(ds, MapId(1), {}, opts);
  REQUIRE(!got.empty());
  CHECK(got.front().map_id == 9);
}

TEST_CASE("confirm_common_region needs all three recent keyframes to agree") {
  // Build two maps seeing the same place; three recent keyframes in the
  // active map and a covisible cluster in the stored map.
  const auto sample = sample_descriptors(800, 55);
  const VocabularyTree v = build_vocabulary(sample, 8, 2, 4);
  RecognitionDatabase db(v);

  Atlas atlas;
  const MapId stored = atlas.create_map();
  const MapId active = atlas.create_map();
  atlas.set_active(active);
  atlas.on_keyframe_added = [&](MapId mid, const KeyFrame& kf) {
    db.index_keyframe(mid, kf);
  };

  // Shared place descriptors; stored map has three covisible keyframes there.
  const std::vector<Descriptor> place(sample.begin(), sample.begin() + 60);
  auto make_kf = [&](int salt) {
    std::vector<Descriptor> ds(place.begin() + salt, place.begin() + 40 + salt);
    return keyframe_with(atlas.fresh_keyframe_id(), ds);
  };
  std::vector<KfId> stored_ids, active_ids;
  for (int i = 0; i < 3; ++i) {
    KeyFrame kf = make_kf(i);
    stored_ids.push_back(atlas.add_keyframe(stored, std::move(kf)));
  }
  // Make the stored keyframes covisible through shared points.
  for (int p = 0; p < 30; ++p) {
    MapPoint mp;
    mp.id = atlas.fresh_point_id();
    mp.descriptor = place[p];
    for (KfId kid : stored_ids) mp.observations[kid] = p;
    atlas.map(stored).add_point(std::move(mp));
  }
  for (int i = 0; i < 3; ++i) {
    KeyFrame kf = make_kf(10 + i);
    active_ids.push_back(atlas.add_keyframe(active, std::move(kf)));
  }

  QueryOptions opts;
  opts.min_score = 0.0;
  opts.relative_threshold = 0.0;
  opts.max_results = 1;  // top-1 retrieval: the three recents must agree
  const auto hit = confirm_common_region(db, atlas, active_ids, opts);
  REQUIRE(hit.has_value());
  CHECK(hit->map_id == stored);
  CHECK(hit->kind == CandidateKind::MapMerge);

  // A second, disjoint place in the stored map; recents that straddle the
  // two places retrieve candidates that are not mutually covisible, so the
  // confirmation must fail.
  const std::vector<Descriptor> place_b(sample.begin() + 400,
                                        sample.begin() + 460);
  std::vector<KfId> stored_b;
  for (int i = 0; i < 2; ++i) {
    std::vector<Descriptor> ds(place_b.begin() + i, place_b.begin() + 40 + i);
    stored_b.push_back(atlas.add_keyframe(
        stored, keyframe_with(atlas.fresh_keyframe_id(), ds)));
  }
  std::vector<KfId> straddling = {active_ids[0], active_ids[1]};
  {
    std::vector<Descriptor> ds(place_b.begin(), place_b.begin() + 40);
    straddling.push_back(atlas.add_keyframe(
        active, keyframe_with(atlas.fresh_keyframe_id(), ds)));
  }
  CHECK_FALSE(confirm_common_region(db, atlas, straddling, opts).has_value());
}
