#pragma once

#include <chrono>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mirg {

// Transport-level failure talking to an annotator.
class ClientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// External completion service used by the dataset pipeline. Implementations
// must tolerate concurrent complete() calls.
class AnnotatorClient {
public:
    virtual ~AnnotatorClient() = default;
    virtual std::string complete(std::string_view prompt, std::span<const std::string> attachments) = 0;
};

// Prompts end with a line holding this marker followed by a JSON payload.
inline constexpr std::string_view kPayloadMarker = "### INPUT";

enum class FaultKind {
    Transport,     // throw ClientError
    PlainText,     // answer without the think/answer envelope
    Malformed,     // stage 2: non-JSON reply; stage 3: truncated mention tokens
    OutOfRange,    // stage 2: image index past the last image
    DropMention,   // stage 2: omit the last mention from the mapping
};

// Faults are keyed by stage and sample id so tests can target one sample.
struct FaultPlan {
    int stage = 0;  // 0 disables injection
    FaultKind kind = FaultKind::Transport;
    std::set<std::string> sample_ids;

    bool hits(int at_stage, const std::string& sample_id) const {
        return stage == at_stage && sample_ids.contains(sample_id);
    }
};

// Template-driven stand-in for the annotator models: builds answers from the
// gold objects carried in the prompt payload. A pure function of its inputs.
class DeterministicMock : public AnnotatorClient {
public:
    explicit DeterministicMock(FaultPlan faults = {}) : faults_(std::move(faults)) {}
    std::string complete(std::string_view prompt, std::span<const std::string> attachments) override;

private:
    FaultPlan faults_;
};

struct RemoteEndpointConfig {
    std::string url;      // e.g. http://localhost:8080/v1/complete
    std::string api_key;  // sent as a bearer token when non-empty
    int max_tokens = 2048;
    std::chrono::milliseconds timeout{60000};
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{250};
};

// POSTs {"prompt", "attachments", "max_tokens"} and reads {"text"}. Transport
// errors and 5xx/429 replies are retried with exponential backoff.
class RemoteEndpoint : public AnnotatorClient {
public:
    explicit RemoteEndpoint(RemoteEndpointConfig config);
    std::string complete(std::string_view prompt, std::span<const std::string> attachments) override;

private:
    RemoteEndpointConfig config_;
    std::string scheme_host_port_;
    std::string path_;
};

}  // namespace mirg
