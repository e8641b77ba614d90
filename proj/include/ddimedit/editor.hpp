#pragma once

// One edit end to end: caption -> after-caption -> direction -> invert ->
// generate -> decode, with an inversion cache and a manifest per run.
//
// Layout under the output directory:
//   runs/<id>/manifest.json   input.png   output.png
//   runs/<id>/base.bin        before-caption conditioning (generation base)
//   runs/<id>/direction.bin   edit direction
//   runs/<id>/cond.bin        conditioning used by non-full modes
//   runs/<id>/uncond.bin      unconditional embedding (guidance branch)
//   cache/inversions/<key>.bin (+ .json sidecar)

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "ddimedit/adapters.hpp"
#include "ddimedit/captions.hpp"
#include "ddimedit/ddim.hpp"
#include "ddimedit/direction.hpp"

namespace ddimedit {

enum class ConditioningMode { full, instruction_only, after_caption_only };
std::string to_string(ConditioningMode m);
ConditioningMode conditioning_mode_from_string(const std::string& s);

struct EditConfig {
    double weight = 1.0;
    int steps_invert = 100;
    int steps_generate = 100;
    double guidance_scale = 7.5;
    CaptionConfig caption;
    ConditioningMode conditioning_mode = ConditioningMode::full;
    std::uint64_t seed = 0;
    int fixed_point_iterations = 0;
    bool allow_zero_weight = false;  // test profile only: w = 0 reconstructions

    void validate() const;  // ConfigError naming the offending key
};

nlohmann::json to_json(const EditConfig& c);
// Missing keys keep `defaults`.
EditConfig edit_config_from_json(const nlohmann::json& j, const EditConfig& defaults = {});

struct EditRequest {
    Image image;
    std::string image_id;  // captioner fixture key; defaults to the pixel hash
    std::string instruction;
    EditConfig config;
    CaptionOverrides overrides;
};

struct EditResult {
    Image output_image;
    CaptionPair caption_pair;
    double direction_norm = 0.0;
    std::map<std::string, double> timings;  // seconds per stage
    std::string manifest_id;
    std::filesystem::path run_dir;
    bool inversion_cache_hit = false;
    nlohmann::json manifest;
};

struct InversionOutcome {
    std::string cache_key;
    std::filesystem::path cache_path;
    bool cache_hit = false;
    std::string caption;
    InvertedLatent latent;
};

// stage name, step within the stage, total steps in the stage
using ProgressCallback = std::function<void(const std::string& stage, int step, int total)>;

class Editor {
public:
    Editor(AdapterSet adapters, std::filesystem::path out_dir);

    // Stage failures are recorded in the run manifest (status "failed") and
    // rethrown as StageError.
    EditResult edit(const EditRequest& req, const ProgressCallback& progress = {});

    // Inversion alone, through the same cache an edit uses. An empty
    // `caption` asks the captioner.
    InversionOutcome invert(const Image& image, const std::string& image_id, const std::string& caption, int steps,
                            int fixed_point_iterations = 0, const ProgressCallback& progress = {});

    // Regenerates a finished run at a new weight from its stored direction,
    // base conditioning and cached inversion. No captioner, LLM or text
    // embedding calls. CacheMissError when the artifacts are gone.
    EditResult rerun_with_weight(const std::string& manifest_id, double weight,
                                 const ProgressCallback& progress = {});

    // CacheMissError unless `manifest_id` finished and its rerun artifacts
    // (inversion cache entry, base, direction, input) are still on disk.
    void check_rerun_artifacts(const std::string& manifest_id) const;

    nlohmann::json load_manifest(const std::string& manifest_id) const;
    std::filesystem::path run_dir(const std::string& manifest_id) const;
    const std::filesystem::path& out_dir() const noexcept { return out_dir_; }
    const AdapterSet& adapters() const noexcept { return adapters_; }

    // Sha256 over (cropped pixels, before-caption, steps, model fingerprint,
    // fixed-point iterations).
    std::string inversion_cache_key(const Image& cropped, const std::string& caption, int steps,
                                    int fixed_point_iterations) const;

private:
    AdapterSet adapters_;
    std::filesystem::path out_dir_;
    std::mutex mutex_;  // one job at a time per adapter set
};

std::string image_sha256(const Image& image);

}  // namespace ddimedit
