#pragma once

#include <iosfwd>
#include <string>

#include "atlas/map.hpp"

namespace atlas {

// Binary map container. Layout (little-endian):
//   magic "ATLS", u32 version, u8 kind (1 = submap, 2 = atlas)
//   submap: id, covisibility threshold, root, keyframes (id, timestamp,
//   pose as tx ty tz qx qy qz qw plus the exact 3x3 rotation entries in row
//   order, gauge flag, measurements), insertion
//   order, points (id, xyz, descriptor, observation links), spanning-tree
//   parents, fuse redirects, covisibility edges.
// Output is deterministic: containers iterate in id order and quaternions
// are normalized with qw >= 0.

void save_submap(std::ostream& os, const SubMap& m);
SubMap load_submap(std::istream& is);

void save_atlas(std::ostream& os, const Atlas& a);
Atlas load_atlas(std::istream& is);

std::string atlas_to_bytes(const Atlas& a);

void save_atlas_file(const std::string& path, const Atlas& a);
Atlas load_atlas_file(const std::string& path);

}  // namespace atlas
