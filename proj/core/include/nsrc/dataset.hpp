#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nsrc/config.hpp"
#include "nsrc/container.hpp"
#include "nsrc/simulation.hpp"
#include "nsrc/training.hpp"

namespace nsrc {

// Container-backed sample and checkpoint records, the dataset manifest, and
// the synthetic dataset generator behind the `simulate` subcommand.

void save_sample(const std::string& path, const AcquisitionSample& s);
AcquisitionSample load_sample(const std::string& path);

struct ManifestEntry {
  std::string split;  // "train" or "val"
  double weight = 1.0;
  std::uint64_t seed = 0;
  std::string path;  // relative to the manifest directory
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Generates samples + manifest + resolved config under out_dir. Byte-identical
// output for identical (config, seed).
void generate_dataset(const RunConfig& cfg, const std::string& out_dir);

LoadedDataset load_dataset(const std::string& manifest_path);

void save_checkpoint(const std::string& path, const CascadeModel& model,
                     const RunConfig& cfg);
// Rebuilds the model from the stored config and restores parameter values.
std::unique_ptr<CascadeModel> load_checkpoint(const std::string& path, RunConfig* cfg_out);

}  // namespace nsrc
