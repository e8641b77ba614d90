#include <algorithm>
#include <cctype>

#include "ddimedit/adapters.hpp"

namespace ddimedit {

namespace {

class CountedText final : public TextEmbedder {
public:
    CountedText(std::shared_ptr<TextEmbedder> inner, std::shared_ptr<CallCounters> c)
        : inner_(std::move(inner)), c_(std::move(c)) {}
    TextConditioning embed(std::string_view text) override {
        ++c_->embed_text;
        return inner_->embed(text);
    }
    TextConditioning embed_unconditional() override {
        ++c_->embed_text;
        return inner_->embed_unconditional();
    }
    std::int64_t context_length() const override { return inner_->context_length(); }
    std::int64_t embed_dim() const override { return inner_->embed_dim(); }
    std::string model_id() const override { return inner_->model_id(); }

private:
    std::shared_ptr<TextEmbedder> inner_;
    std::shared_ptr<CallCounters> c_;
};

class CountedImage final : public ImageEmbedder {
public:
    CountedImage(std::shared_ptr<ImageEmbedder> inner, std::shared_ptr<CallCounters> c)
        : inner_(std::move(inner)), c_(std::move(c)) {}
    ImageEmbedding embed(const Image& image, const std::string& id) override {
        ++c_->embed_image;
        return inner_->embed(image, id);
    }
    std::int64_t embed_dim() const override { return inner_->embed_dim(); }
    std::string model_id() const override { return inner_->model_id(); }

private:
    std::shared_ptr<ImageEmbedder> inner_;
    std::shared_ptr<CallCounters> c_;
};

class CountedCaptioner final : public Captioner {
public:
    CountedCaptioner(std::shared_ptr<Captioner> inner, std::shared_ptr<CallCounters> c)
        : inner_(std::move(inner)), c_(std::move(c)) {}
    std::string caption(const Image& image, const std::string& id) override {
        ++c_->caption;
        return inner_->caption(image, id);
    }
    std::string model_id() const override { return inner_->model_id(); }

private:
    std::shared_ptr<Captioner> inner_;
    std::shared_ptr<CallCounters> c_;
};

class CountedPredictor final : public NoisePredictor {
public:
    CountedPredictor(std::shared_ptr<NoisePredictor> inner, std::shared_ptr<CallCounters> c)
        : inner_(std::move(inner)), c_(std::move(c)) {}
    Tensor predict(const Tensor& latent, int t, const TextConditioning& cond) override {
        ++c_->predict_noise;
        return inner_->predict(latent, t, cond);
    }
    std::string model_id() const override { return inner_->model_id(); }

private:
    std::shared_ptr<NoisePredictor> inner_;
    std::shared_ptr<CallCounters> c_;
};

class CountedCodec final : public LatentCodec {
public:
    CountedCodec(std::shared_ptr<LatentCodec> inner, std::shared_ptr<CallCounters> c)
        : inner_(std::move(inner)), c_(std::move(c)) {}
    LatentImage encode(const Image& image) override {
        ++c_->encode;
        return inner_->encode(image);
    }
    Image decode(const LatentImage& latent) override {
        ++c_->decode;
        return inner_->decode(latent);
    }
    int factor() const override { return inner_->factor(); }
    int channels() const override { return inner_->channels(); }
    std::string model_id() const override { return inner_->model_id(); }

private:
    std::shared_ptr<LatentCodec> inner_;
    std::shared_ptr<CallCounters> c_;
};

class CountedGenerator final : public TextGenerator {
public:
    CountedGenerator(std::shared_ptr<TextGenerator> inner, std::shared_ptr<CallCounters> c)
        : inner_(std::move(inner)), c_(std::move(c)) {}
    std::string generate(std::string_view prompt, const LlmConfig& config) override {
        ++c_->generate_text;
        return inner_->generate(prompt, config);
    }
    std::string model_id() const override { return inner_->model_id(); }

private:
    std::shared_ptr<TextGenerator> inner_;
    std::shared_ptr<CallCounters> c_;
};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

AdapterSet instrument(AdapterSet raw) {
    auto c = raw.counters ? raw.counters : std::make_shared<CallCounters>();
    raw.counters = c;
    if (raw.text) raw.text = std::make_shared<CountedText>(raw.text, c);
    if (raw.image) raw.image = std::make_shared<CountedImage>(raw.image, c);
    if (raw.captioner) raw.captioner = std::make_shared<CountedCaptioner>(raw.captioner, c);
    if (raw.denoiser) raw.denoiser = std::make_shared<CountedPredictor>(raw.denoiser, c);
    if (raw.codec) raw.codec = std::make_shared<CountedCodec>(raw.codec, c);
    if (raw.llm) raw.llm = std::make_shared<CountedGenerator>(raw.llm, c);
    return raw;
}

std::string apply_chat_template(std::string_view model_id, std::string_view prompt) {
    const std::string id = lower(model_id);
    const std::string p(prompt);
    if (id.find("mistral") != std::string::npos) return "<s>[INST] " + p + " [/INST]";
    if (id.find("gemma") != std::string::npos)
        return "<bos><start_of_turn>user\n" + p + "<end_of_turn>\n<start_of_turn>model\n";
    if (id.find("llama-3") != std::string::npos || id.find("llama3") != std::string::npos)
        return "<|begin_of_text|><|start_header_id|>user<|end_header_id|>\n\n" + p +
               "<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n\n";
    if (id.find("llama-2") != std::string::npos && id.find("chat") != std::string::npos)
        return "<s>[INST] " + p + " [/INST]";
    if (id.find("phi") != std::string::npos) return "Instruct: " + p + "\nOutput:";
    return p;
}

}  // namespace ddimedit
