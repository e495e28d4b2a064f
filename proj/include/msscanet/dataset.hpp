#pragma once

#include <string>
#include <vector>

#include "msscanet/rng.hpp"
#include "msscanet/tensor.hpp"

namespace msscanet {

struct ManifestRecord {
    std::string path;
    double mos = 0.0;
    std::string dataset;
    std::string split;  // "train" or "test"
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    double mos_lo = 0.0;
    double mos_hi = 1.0;

    std::vector<const ManifestRecord*> split(const std::string& name) const;
    double normalize(double mos) const { return (mos - mos_lo) / (mos_hi - mos_lo); }
    double denormalize(double v) const { return mos_lo + v * (mos_hi - mos_lo); }
};

// CSV with header `path,mos,dataset,split`; an optional comment line
// `# mos_scale = lo,hi` declares the MOS range (default [0,1]). Validates
// path uniqueness, split values and MOS within scale; errors carry the
// offending row number.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Binary PPM (P6), 8-bit RGB. Pixels map to [0,1] on read; writes clamp.
TensorPtr read_ppm(const std::string& path);
void write_ppm(const TensorPtr& image, const std::string& path);

// Synthetic-distortion corpus description. Ground-truth MOS is
// 1 - severity/severity_max mapped onto [mos_lo, mos_hi].
struct SynthSpec {
    int64_t count = 200;
    int64_t image_size = 64;
    std::vector<std::string> kinds = {"gaussian-blur", "additive-noise", "block-artifact"};
    std::vector<double> severities = {0.0, 0.25, 0.5, 0.75, 1.0};
    uint64_t seed = 0;
    double mos_lo = 0.0;
    double mos_hi = 1.0;
    double train_fraction = 0.8;
    std::string tag = "synth";
};

// Procedurally textured base image (sinusoidal gratings plus rectangles),
// values inside [0.15, 0.85] so distortions have headroom.
TensorPtr synth_base_image(int64_t size, Rng& rng);

// severity 0 returns the input unchanged for every kind. Reference
// degradation statistics, strictly monotone in severity:
//   gaussian-blur:  high-frequency energy (vs 3x3 box blur) strictly decreases
//   additive-noise: pixel variance strictly increases
//   block-artifact: high-frequency energy strictly decreases
TensorPtr apply_distortion(const TensorPtr& image, const std::string& kind, double severity,
                           double severity_max, Rng& rng);

// Mean squared difference between the image and its 3x3 box blur.
double high_frequency_energy(const TensorPtr& image);
double pixel_variance(const TensorPtr& image);

// Writes `count` PPM images and a manifest.csv into out_dir; image i uses
// kind i % K and severity (i / K) % S on base i / (K*S), so each base covers
// every (kind, severity) cell while bases vary across the corpus.
// Deterministic given spec.seed.
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::string& out_dir);

}  // namespace msscanet
