#pragma once

#include "btks/bicnet.hpp"
#include "btks/config.hpp"
#include "btks/random.hpp"
#include "btks/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace btks {

// 8-bit RGB, row-major, channels interleaved.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;

    std::uint8_t* pixel(std::size_t y, std::size_t x) { return rgb.data() + 3 * (y * width + x); }
    const std::uint8_t* pixel(std::size_t y, std::size_t x) const { return rgb.data() + 3 * (y * width + x); }
};

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

enum class Part { head = 0, torso = 1, legs = 2, bag = 3 };
enum class Pattern { solid = 0, hstripes = 1, vstripes = 2, checker = 3 };

struct PartAppearance {
    std::array<std::uint8_t, 3> color{};
    Pattern pattern = Pattern::solid;
    std::uint32_t texture_seed = 0; // stripe phase and period
    bool operator==(const PartAppearance&) const = default;
};

struct SyntheticIdentity {
    std::size_t id = 0;
    std::array<PartAppearance, 4> parts; // indexed by Part
    bool has_bag = false;
    double gait_amplitude = 0; // fraction of frame width
    double gait_frequency = 0; // cycles per frame
    // Set when the torso was copied from another identity.
    std::ptrdiff_t torso_twin = -1;
};

struct OcclusionSpan {
    std::size_t start = 0; // first frame
    std::size_t end = 0;   // one past the last frame
    std::string region;    // "upper", "lower", "left" or "right" half of the figure box
};

enum class Split { train, query, gallery };
std::string split_name(Split s);

struct TrackletInfo {
    std::string dir; // relative to the dataset root
    std::size_t identity = 0;
    std::size_t camera = 0;
    std::size_t index = 0; // k-th tracklet of this identity under this camera
    std::size_t length = 0;
    std::vector<OcclusionSpan> occlusions;
    Split split = Split::train;
};

struct GeneratorConfig {
    std::size_t num_ids = 20;
    std::size_t cams_per_id = 2;
    std::size_t tracklets_per_camera = 2;
    std::size_t tracklet_len = 64;
    Extent resolution{64, 32};
    std::uint64_t seed = 7;

    void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j, const GeneratorConfig& base = {});

// Every fourth identity (id % 4 == 1) copies the torso of the previous one
// and is forced to differ in head and legs.
std::vector<SyntheticIdentity> make_identities(std::size_t num_ids, std::uint64_t seed);

// Open-set split: the first half of the identities (rounded down, at least one)
// train; for each remaining identity its first tracklet is the query and the
// rest go to the gallery.
std::vector<TrackletInfo> plan_tracklets(const GeneratorConfig& cfg);

// Writes <root>/tracklets/<id>_<cam>_<k>/frame_%04d.png and <root>/index.json.
void generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& root);

// Frames of one tracklet, rendered in memory (what generate_dataset writes).
std::vector<Image> render_tracklet(const GeneratorConfig& cfg, const SyntheticIdentity& identity,
                                   const TrackletInfo& tracklet);

class Dataset {
public:
    static Dataset load(const std::filesystem::path& root);

    const GeneratorConfig& config() const { return config_; }
    const std::vector<TrackletInfo>& tracklets() const { return tracklets_; }
    const std::vector<SyntheticIdentity>& identities() const { return identities_; }
    std::vector<std::size_t> indices(Split split) const;
    // Distinct identities in `split`, ascending.
    std::vector<std::size_t> identities_in(Split split) const;

    // Normalized frames [L, 3, H, W]: (x / 255 - mean) / std per channel.
    Tensor<float> frames(std::size_t tracklet) const;
    const std::array<float, 3>& mean() const { return mean_; }
    const std::array<float, 3>& stddev() const { return std_; }

private:
    GeneratorConfig config_;
    std::vector<TrackletInfo> tracklets_;
    std::vector<SyntheticIdentity> identities_;
    std::vector<std::vector<std::uint8_t>> pixels_; // per tracklet, [L, 3, H, W]
    std::array<float, 3> mean_{};
    std::array<float, 3> std_{};
};

// start uniform over [0, length - (n - 1) * stride], then every stride-th frame.
std::vector<std::size_t> sample_indices(std::size_t length, std::size_t n, std::size_t stride, Rng& rng);
Tensor<float> sample_segment(const Tensor<float>& tracklet, std::size_t n, std::size_t stride, Rng& rng);

// Resizes [N,3,H,W] (or [S,N,3,H,W]) to `big` and splits; `small` must be half of `big`.
SegmentSplit<float> resize_and_split(const Tensor<float>& segment, std::size_t alpha, Extent big, Extent small);

struct AugmentConfig {
    double flip_probability = 0.5;
    double erase_probability = 0.5;
    double erase_area_min = 0.02;
    double erase_area_max = 0.4;
    double erase_aspect_min = 0.3; // aspect drawn log-uniformly in [min, 1/min]
};

// One flip decision for the whole segment; erasing is drawn per frame and
// filled with `fill` (per channel, in the frames' units).
Tensor<float> augment(const Tensor<float>& frames, Rng& rng, const AugmentConfig& cfg = {},
                      std::array<float, 3> fill = {0.f, 0.f, 0.f});

// Round-robin PK sampling. Identities are reshuffled each pass; a pass that does
// not fill the last batch continues into the next pass. Each identity
// contributes `per_identity` tracklets, drawn without replacement while possible.
class PkSampler {
public:
    PkSampler(std::vector<std::size_t> tracklet_labels, std::size_t p, std::size_t per_identity, std::uint64_t seed);

    // Positions into tracklet_labels, p * per_identity per batch, grouped by identity.
    std::vector<std::vector<std::size_t>> epoch(std::size_t passes = 1);
    std::size_t num_identities() const { return by_identity_.size(); }

private:
    std::vector<std::vector<std::size_t>> by_identity_;
    std::size_t p_, s_;
    Rng rng_;
};

} // namespace btks
