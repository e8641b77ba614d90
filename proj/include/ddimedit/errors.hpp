#pragma once

#include <stdexcept>
#include <string>

namespace ddimedit {

// Base of every error the library throws. `kind()` is a stable machine-readable
// tag used by the CLI error line and the HTTP service.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

// Violated precondition on shapes or argument domains.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class InputFormatError : public Error {
public:
    InputFormatError(const std::string& file, const std::string& what)
        : Error("input_format", file + ": " + what), file_(file) {}
    const std::string& file() const noexcept { return file_; }

private:
    std::string file_;
};

class ConfigError : public Error {
public:
    ConfigError(const std::string& key, const std::string& what)
        : Error("config", "config key '" + key + "': " + what), key_(key) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class AdapterUnavailableError : public Error {
public:
    enum class Cause { configuration, runtime };
    AdapterUnavailableError(std::string role, Cause cause, const std::string& what)
        : Error("adapter_unavailable",
                role + " adapter unavailable (" +
                    (cause == Cause::configuration ? "configuration" : "runtime") + "): " + what),
          role_(std::move(role)), cause_(cause) {}
    const std::string& role() const noexcept { return role_; }
    Cause cause() const noexcept { return cause_; }

private:
    std::string role_;
    Cause cause_;
};

class TransportError : public Error {
public:
    TransportError(const std::string& what, bool retryable)
        : Error(retryable ? "transport_retryable" : "transport", what), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

// Non-retryable rejection of an LLM request (e.g. context overflow).
class LlmInputError : public Error {
public:
    explicit LlmInputError(const std::string& what) : Error("llm_input", what) {}
};

class ScheduleDomainError : public Error {
public:
    explicit ScheduleDomainError(const std::string& what) : Error("schedule_domain", what) {}
};

class NumericalDivergenceError : public Error {
public:
    NumericalDivergenceError(int step, const std::string& stage)
        : Error("numerical_divergence",
                stage + ": non-finite latent at step " + std::to_string(step)),
          step_(step),
          stage_(stage) {}
    int step() const noexcept { return step_; }
    const std::string& stage() const noexcept { return stage_; }

private:
    int step_;
    std::string stage_;
};

class TemplateError : public Error {
public:
    TemplateError(const std::string& placeholder, const std::string& what)
        : Error("template", what + " [" + placeholder + "]"), placeholder_(placeholder) {}
    const std::string& placeholder() const noexcept { return placeholder_; }

private:
    std::string placeholder_;
};

class CaptionParseError : public Error {
public:
    CaptionParseError(const std::string& what, std::string raw)
        : Error("caption_parse", what), raw_(std::move(raw)) {}
    const std::string& raw_completion() const noexcept { return raw_; }

private:
    std::string raw_;
};

class CacheMissError : public Error {
public:
    explicit CacheMissError(const std::string& what)
        : Error("cache_miss", what + "; run a full edit first") {}
};

class NotFoundError : public Error {
public:
    explicit NotFoundError(const std::string& what) : Error("not_found", what) {}
};

// Wraps a failure in one named editor stage; cause_kind() is the kind() of
// the original error.
class StageError : public Error {
public:
    StageError(std::string stage, std::string cause_kind, const std::string& what)
        : Error("stage", stage + ": " + what), stage_(std::move(stage)), cause_kind_(std::move(cause_kind)) {}
    const std::string& stage() const noexcept { return stage_; }
    const std::string& cause_kind() const noexcept { return cause_kind_; }

private:
    std::string stage_;
    std::string cause_kind_;
};

}  // namespace ddimedit
