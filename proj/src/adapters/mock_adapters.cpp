#include "ddimedit/mock_adapters.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numbers>

#include "ddimedit/errors.hpp"
#include "ddimedit/hashing.hpp"
#include "ddimedit/kernels.hpp"

namespace ddimedit {

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> mock_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c == '\'' || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

// ---------------------------------------------------------------------------
// Text

MockTextEmbedder::MockTextEmbedder(const MockOptions& opts)
    : seed_(opts.seed), embed_dim_(opts.embed_dim), context_length_(opts.context_length) {
    if (embed_dim_ < 1 || context_length_ < 3) throw ContractError("mock embedder needs embed_dim >= 1, context >= 3");
}

TextConditioning MockTextEmbedder::encode(std::string_view text, bool allow_empty) {
    const std::string norm = normalize_whitespace(text);
    if (norm.empty() && !allow_empty) throw ContractError("embed_text: text is empty after trimming");

    TextConditioning out;
    out.source_text = norm;
    auto words = mock_words(norm);
    const auto capacity = static_cast<std::size_t>(context_length_ - 2);
    if (words.size() > capacity) {
        out.warnings.push_back("text truncated from " + std::to_string(words.size()) + " to " +
                               std::to_string(capacity) + " tokens");
        words.resize(capacity);
    }

    std::vector<std::string> sequence;
    sequence.reserve(static_cast<std::size_t>(context_length_));
    sequence.emplace_back("<bos>");
    for (auto& w : words) sequence.push_back(std::move(w));
    while (sequence.size() < static_cast<std::size_t>(context_length_)) sequence.emplace_back("<eos>");

    const auto dim = static_cast<std::size_t>(embed_dim_);
    out.tokens_embedded = Tensor({context_length_, embed_dim_});
    std::vector<double> prefix(dim, 0.0);
    for (std::int64_t i = 0; i < context_length_; ++i) {
        const auto unit = hash_unit_vector("tok:" + sequence[static_cast<std::size_t>(i)], seed_, dim);
        double ss = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            prefix[k] += unit[k];
            ss += prefix[k] * prefix[k];
        }
        const double inv = 1.0 / std::sqrt(ss);
        auto row = out.tokens_embedded.row(i);
        for (std::size_t k = 0; k < dim; ++k) row[k] = static_cast<float>(prefix[k] * inv);
    }
    out.pooled = hash_unit_vector(norm, seed_, dim);
    return out;
}

TextConditioning MockTextEmbedder::embed(std::string_view text) { return encode(text, false); }

TextConditioning MockTextEmbedder::embed_unconditional() { return encode("", true); }

// ---------------------------------------------------------------------------
// Image embedding and captioning

namespace {
constexpr int kGrid = 4;
constexpr std::size_t kFeatures = kGrid * kGrid * 3 + 1;

std::array<double, kFeatures> grid_features(const Image& image) {
    std::array<double, kFeatures> f{};
    std::array<double, kGrid * kGrid> counts{};
    for (int y = 0; y < image.height; ++y) {
        const int gy = y * kGrid / image.height;
        for (int x = 0; x < image.width; ++x) {
            const int gx = x * kGrid / image.width;
            const int cell = gy * kGrid + gx;
            const auto* p = image.at(x, y);
            for (int c = 0; c < 3; ++c) f[static_cast<std::size_t>(cell * 3 + c)] += p[c] / 255.0;
            counts[static_cast<std::size_t>(cell)] += 1.0;
        }
    }
    for (std::size_t cell = 0; cell < counts.size(); ++cell)
        for (std::size_t c = 0; c < 3; ++c) {
            auto& v = f[cell * 3 + c];
            v = counts[cell] > 0 ? v / counts[cell] - 0.5 : 0.0;
        }
    f[kFeatures - 1] = 0.25;
    return f;
}
}  // namespace

MockImageEmbedder::MockImageEmbedder(const MockOptions& opts) : embed_dim_(opts.embed_dim) {
    SplitMix64 rng(opts.seed * kGoldenGamma ^ 0x696d616765ull);
    projection_.resize(static_cast<std::size_t>(embed_dim_) * kFeatures);
    for (auto& p : projection_) p = static_cast<float>(rng.symmetric());
}

ImageEmbedding MockImageEmbedder::embed(const Image& image, const std::string& image_id) {
    if (image.empty()) throw InputFormatError(image_id, "empty image");
    const auto f = grid_features(image);
    std::vector<double> v(static_cast<std::size_t>(embed_dim_), 0.0);
    double ss = 0.0;
    for (std::size_t d = 0; d < v.size(); ++d) {
        for (std::size_t k = 0; k < kFeatures; ++k) v[d] += projection_[d * kFeatures + k] * f[k];
        ss += v[d] * v[d];
    }
    const double inv = ss > 0 ? 1.0 / std::sqrt(ss) : 0.0;
    ImageEmbedding out;
    out.source_image_id = image_id;
    out.vector.resize(v.size());
    for (std::size_t d = 0; d < v.size(); ++d) out.vector[d] = static_cast<float>(v[d] * inv);
    return out;
}

std::string MockCaptioner::caption(const Image& image, const std::string& image_id) {
    if (auto it = table_.find(image_id); it != table_.end()) return it->second;
    if (image.empty()) throw InputFormatError(image_id, "empty image");
    double mean[3] = {0, 0, 0};
    for (std::size_t i = 0; i < image.pixels.size(); i += 3)
        for (int c = 0; c < 3; ++c) mean[c] += image.pixels[i + static_cast<std::size_t>(c)];
    const double n = static_cast<double>(image.pixels.size() / 3);
    for (double& m : mean) m /= n;

    struct Named {
        const char* name;
        double r, g, b;
    };
    static constexpr Named kPalette[] = {
        {"black", 0, 0, 0},       {"white", 255, 255, 255}, {"gray", 128, 128, 128},
        {"red", 200, 30, 30},     {"green", 40, 160, 60},   {"blue", 40, 70, 200},
        {"yellow", 230, 220, 50}, {"orange", 240, 140, 30}, {"purple", 130, 50, 160},
        {"brown", 120, 80, 40},
    };
    const Named* best = &kPalette[0];
    double best_d = 1e300;
    for (const auto& p : kPalette) {
        const double d = (mean[0] - p.r) * (mean[0] - p.r) + (mean[1] - p.g) * (mean[1] - p.g) +
                         (mean[2] - p.b) * (mean[2] - p.b);
        if (d < best_d) {
            best_d = d;
            best = &p;
        }
    }
    return std::string("a photo of a mostly ") + best->name + " scene";
}

// ---------------------------------------------------------------------------
// Noise predictors

Tensor ZeroNoisePredictor::predict(const Tensor& latent, int, const TextConditioning&) {
    return Tensor(latent.shape(), 0.0f);
}

Tensor LinearNoisePredictor::predict(const Tensor& latent, int, const TextConditioning&) {
    Tensor out(latent.shape());
    kernels::scale(gain_, latent.values(), out.values());
    return out;
}

Tensor FrozenRandomNoisePredictor::predict(const Tensor& latent, int timestep, const TextConditioning&) {
    Tensor out(latent.shape());
    SplitMix64 rng(seed_ * kGoldenGamma ^ (static_cast<std::uint64_t>(timestep) + 1) * 0xD1B54A32D192ED03ull);
    for (auto& v : out.values()) v = static_cast<float>(rng.symmetric());
    return out;
}

ConditionedNoisePredictor::ConditionedNoisePredictor(const MockOptions& opts, int channels)
    : seed_(opts.seed),
      gain_(static_cast<float>(opts.predictor_gain)),
      coupling_(static_cast<float>(opts.predictor_coupling)),
      channels_(channels) {}

Tensor ConditionedNoisePredictor::predict(const Tensor& latent, int, const TextConditioning& conditioning) {
    if (latent.rank() != 3 || latent.dim(0) != channels_)
        throw ContractError("predict_noise: latent shape " + shape_string(latent.shape()) + " vs model [" +
                            std::to_string(channels_) + " x H x W]");
    const auto& tok = conditioning.tokens_embedded;
    if (tok.rank() != 2) throw ContractError("predict_noise: conditioning has no token matrix");
    const auto len = tok.dim(0);
    const auto dim = static_cast<std::size_t>(tok.dim(1));

    std::vector<float> mean(dim, 0.0f);
    for (std::int64_t r = 0; r < len; ++r) kernels::accumulate(1.0f / static_cast<float>(len), tok.row(r), mean);

    Tensor out(latent.shape());
    kernels::scale(gain_, latent.values(), out.values());
    const auto h = latent.dim(1);
    const auto w = latent.dim(2);
    for (int c = 0; c < channels_; ++c) {
        const auto r = hash_unit_vector("chan:" + std::to_string(c), seed_, dim);
        const double strength = kernels::dot(mean, r) * std::sqrt(static_cast<double>(dim));
        SplitMix64 rng(seed_ * kGoldenGamma ^ (0xC0FFEEull + static_cast<std::uint64_t>(c)));
        const double fx = 0.2 + 0.6 * rng.uniform();
        const double fy = 0.2 + 0.6 * rng.uniform();
        const double phase = 2.0 * std::numbers::pi * rng.uniform();
        float* plane = out.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(h * w);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                plane[y * w + x] +=
                    static_cast<float>(coupling_ * strength * std::cos(fx * double(x) + fy * double(y) + phase));
    }
    return out;
}

std::shared_ptr<NoisePredictor> make_mock_predictor(const MockOptions& opts, int channels) {
    if (opts.predictor == "zero") return std::make_shared<ZeroNoisePredictor>();
    if (opts.predictor == "linear") return std::make_shared<LinearNoisePredictor>(opts.predictor_gain);
    if (opts.predictor == "frozen_random") return std::make_shared<FrozenRandomNoisePredictor>(opts.seed);
    if (opts.predictor == "conditioned") return std::make_shared<ConditionedNoisePredictor>(opts, channels);
    throw ConfigError("mock.predictor", "unknown mock predictor '" + opts.predictor + "'");
}

// ---------------------------------------------------------------------------
// Codec

LatentImage MockLatentCodec::encode(const Image& image) {
    if (image.empty()) throw ContractError("encode_image: empty image");
    const CropBox box = center_crop_box(image.width, image.height, factor_);
    const Image src = (box.width == image.width && box.height == image.height) ? image : crop(image, box);
    const int lh = box.height / factor_;
    const int lw = box.width / factor_;
    LatentImage out;
    out.width = box.width;
    out.height = box.height;
    out.original_width = image.width;
    out.original_height = image.height;
    out.scaling_factor = 1.0;
    out.data = Tensor({4, lh, lw});
    const double inv_block = 1.0 / (static_cast<double>(factor_) * factor_);
    const std::size_t plane = static_cast<std::size_t>(lh) * static_cast<std::size_t>(lw);
    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) {
            double acc[3] = {0, 0, 0};
            for (int dy = 0; dy < factor_; ++dy)
                for (int dx = 0; dx < factor_; ++dx) {
                    const auto* p = src.at(x * factor_ + dx, y * factor_ + dy);
                    for (int c = 0; c < 3; ++c) acc[c] += p[c];
                }
            const std::size_t idx = static_cast<std::size_t>(y) * static_cast<std::size_t>(lw) + static_cast<std::size_t>(x);
            double v[3];
            for (int c = 0; c < 3; ++c) {
                v[c] = acc[c] * inv_block / 127.5 - 1.0;
                out.data[static_cast<std::size_t>(c) * plane + idx] = static_cast<float>(v[c]);
            }
            out.data[3 * plane + idx] = static_cast<float>(0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2]);
        }
    return out;
}

Image MockLatentCodec::decode(const LatentImage& latent) {
    const auto& t = latent.data;
    if (t.rank() != 3 || t.dim(0) != 4)
        throw ContractError("decode_latent: latent shape " + shape_string(t.shape()) + " vs codec [4 x H x W]");
    const int lh = static_cast<int>(t.dim(1));
    const int lw = static_cast<int>(t.dim(2));
    const std::size_t plane = static_cast<std::size_t>(lh) * static_cast<std::size_t>(lw);
    Image core(lw * factor_, lh * factor_);
    for (int y = 0; y < core.height; ++y)
        for (int x = 0; x < core.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y / factor_) * static_cast<std::size_t>(lw) +
                                    static_cast<std::size_t>(x / factor_);
            auto* p = core.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double v = (static_cast<double>(t[static_cast<std::size_t>(c) * plane + idx]) + 1.0) * 127.5;
                p[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    const int ow = latent.original_width > 0 ? latent.original_width : core.width;
    const int oh = latent.original_height > 0 ? latent.original_height : core.height;
    if (ow == core.width && oh == core.height) return core;
    // restore the pre-crop size by edge replication around the centered core
    const CropBox box = center_crop_box(ow, oh, factor_);
    Image out(ow, oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const int cx = std::clamp(x - box.x, 0, core.width - 1);
            const int cy = std::clamp(y - box.y, 0, core.height - 1);
            std::copy_n(core.at(cx, cy), 3, out.at(x, y));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Text generation

namespace {

std::string last_paragraph(std::string_view prompt) {
    std::string p(prompt);
    while (!p.empty() && std::isspace(static_cast<unsigned char>(p.back()))) p.pop_back();
    const auto pos = p.rfind("\n\n");
    return pos == std::string::npos ? p : p.substr(pos + 2);
}

// Spans opened by a quote at a word start and closed by a quote followed by
// a non-alphanumeric character, so "man's" stays inside a span.
std::vector<std::string> quoted_spans(std::string_view s) {
    std::vector<std::string> spans;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '\'' && (i == 0 || std::isspace(static_cast<unsigned char>(s[i - 1])))) {
            std::size_t j = i + 1;
            while (j < s.size()) {
                if (s[j] == '\'' && (j + 1 == s.size() || !std::isalnum(static_cast<unsigned char>(s[j + 1])))) break;
                ++j;
            }
            if (j < s.size()) {
                spans.emplace_back(s.substr(i + 1, j - i - 1));
                i = j + 1;
                continue;
            }
        }
        ++i;
    }
    return spans;
}

std::string lowercase(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string strip_final_period(std::string s) {
    while (!s.empty() && (s.back() == '.' || std::isspace(static_cast<unsigned char>(s.back())))) s.pop_back();
    return s;
}

std::string synthesize_meta_candidate(std::string_view prompt, std::uint64_t seed) {
    static constexpr const char* kVerbs[] = {"Write", "Create", "Compose", "Generate", "Produce", "Craft"};
    static constexpr const char* kObjects[] = {
        "a caption for the image", "an image caption that represents the image",
        "a new caption describing the image", "a short caption of the picture",
        "a detailed caption for the image"};
    SplitMix64 rng(fnv1a64(prompt) ^ (seed * kGoldenGamma));
    const std::string verb = kVerbs[rng.next() % std::size(kVerbs)];
    const std::string object = kObjects[rng.next() % std::size(kObjects)];
    std::string body;
    switch (rng.next() % 3) {
        case 0:
            body = verb + " " + object + " obtained by applying the transformation [TRANSFORMATION] to the original caption [SOURCE_CAPTION].";
            break;
        case 1:
            body = verb + " " + object + " after [TRANSFORMATION] has been applied to the original caption [SOURCE_CAPTION].";
            break;
        default:
            body = "Given the source caption [SOURCE_CAPTION] and the request [TRANSFORMATION], " + lowercase(verb) +
                   " " + object + " after the transformation.";
    }
    return "prompt: \"" + body + "\"";
}

std::string synthesize_captions(std::string_view prompt) {
    const std::string para = last_paragraph(prompt);
    const auto spans = quoted_spans(para);
    std::string caption = "a photo";
    std::string edit;
    if (spans.size() >= 2) {
        caption = spans[spans.size() - 2];
        edit = spans.back();
    } else if (spans.size() == 1) {
        edit = spans.back();
    } else {
        edit = "edit " + std::to_string(fnv1a64(para) % 1000);
    }
    caption = strip_final_period(caption);
    const std::string after = caption + " after the edit: " + lowercase(strip_final_period(edit));

    const std::string lower = lowercase(para);
    const bool paired = lower.find("before and after") != std::string::npos ||
                        lower.find("prior to and following") != std::string::npos;
    if (!paired) return after + ".";

    int count = 1;
    for (std::size_t i = 0; i < para.size(); ++i)
        if (std::isdigit(static_cast<unsigned char>(para[i]))) {
            count = std::clamp(std::atoi(para.c_str() + i), 1, 8);
            break;
        }
    std::string out = "Before transformation\n\n";
    for (int k = 1; k <= count; ++k)
        out += "Caption " + std::to_string(k) + ": " + caption + (k > 1 ? ", view " + std::to_string(k) : "") + ".\n";
    out += "\nAfter transformation\n\n";
    for (int k = 1; k <= count; ++k)
        out += "Caption " + std::to_string(k) + ": " + after + (k > 1 ? ", view " + std::to_string(k) : "") + ".\n";
    return out;
}

}  // namespace

std::string ScriptedTextGenerator::generate(std::string_view prompt, const LlmConfig& config) {
    if (prompt.empty()) throw ContractError("generate_text: empty prompt");
    if (auto it = script_.find(std::string(prompt)); it != script_.end()) return it->second;
    if (!synthesize_)
        throw AdapterUnavailableError("llm", AdapterUnavailableError::Cause::runtime,
                                      "no scripted completion for prompt");
    if (prompt.find("Your task is to generate a new prompt") != std::string_view::npos)
        return synthesize_meta_candidate(prompt, config.seed);
    return synthesize_captions(prompt);
}

AdapterSet make_mock_adapters(const MockOptions& opts) {
    AdapterSet set;
    set.profile = "mock";
    set.text = std::make_shared<MockTextEmbedder>(opts);
    set.image = std::make_shared<MockImageEmbedder>(opts);
    set.captioner = std::make_shared<MockCaptioner>(opts.captions);
    set.codec = std::make_shared<MockLatentCodec>(opts.codec_factor);
    set.denoiser = make_mock_predictor(opts, set.codec->channels());
    set.llm = std::make_shared<ScriptedTextGenerator>(opts.llm_script, opts.llm_synthesize_unscripted);
    set.llm_config.model_id = "mock-llm";
    set.llm_config.seed = opts.seed;
    return instrument(std::move(set));
}

}  // namespace ddimedit
