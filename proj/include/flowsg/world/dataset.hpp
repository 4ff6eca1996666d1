#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowsg/world/world.hpp"

namespace flowsg::world {

// Scenes are split by id modulo 10: residues 0-7 train, 8 val, 9 test.
enum class Split { train, val, test };
Split split_of(std::uint64_t id);
std::string split_name(Split s);

struct DatasetCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

// Writes train/val/test.jsonl, marginals.json (phrase -> probability over
// train-split edges) and a world.txt config echo into out_dir.
DatasetCounts make_dataset(const WorldConfig& cfg, std::size_t n_scenes,
                           const std::string& out_dir);

// Flat `key = value` echo of the generator config. Downstream stages must
// reload it so the detector view and context dims stay consistent with the
// dataset; phrases are stored comma-joined.
void save_world_config(const std::string& path, const WorldConfig& cfg);
WorldConfig load_world_config(const std::string& path);  // DataError when malformed

// One JSON object per line with fields id, boxes, classes, rels, appearance,
// context. rels holds [i, j, phrase] triples for every ordered pair.
std::vector<Scene> load_scenes(const std::string& path, const WorldConfig& cfg);
void save_scenes(const std::string& path, const std::vector<Scene>& scenes,
                 const WorldConfig& cfg);

std::map<std::string, double> load_marginals(const std::string& path);

}  // namespace flowsg::world
