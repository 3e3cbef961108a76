#include "mirg/annotator.hpp"

#include <algorithm>
#include <thread>

#include "httplib.h"
#include "mirg/pipeline.hpp"

namespace mirg {

namespace {

json payload_of(std::string_view prompt) {
    const std::string marker = std::string(kPayloadMarker) + "\n";
    const std::size_t at = prompt.rfind(marker);
    if (at == std::string_view::npos) throw ClientError("mock annotator: prompt carries no payload");
    try {
        return json::parse(prompt.substr(at + marker.size()));
    } catch (const json::exception& e) {
        throw ClientError(std::string("mock annotator: bad payload: ") + e.what());
    }
}

std::string break_first(std::string text, std::string_view token) {
    if (const std::size_t at = text.find(token); at != std::string::npos) text.erase(at, token.size());
    return text;
}

}  // namespace

std::string DeterministicMock::complete(std::string_view prompt, std::span<const std::string>) {
    const json payload = payload_of(prompt);
    const int stage = payload.at("stage").get<int>();
    const RawSample raw = payload.get<RawSample>();
    const bool faulty = faults_.hits(stage, raw.sample_id);
    if (faulty && faults_.kind == FaultKind::Transport) throw ClientError("injected transport failure");

    switch (stage) {
        case 1: {
            if (faulty && faults_.kind == FaultKind::PlainText) {
                std::string plain = "The answer is";
                for (const auto& label : mention_labels(raw)) plain += " " + std::string(kRefOpen) + label + std::string(kRefClose);
                return plain + ".";
            }
            return template_cot(raw);
        }
        case 2: {
            if (faulty && (faults_.kind == FaultKind::Malformed || faults_.kind == FaultKind::PlainText)) {
                return "Each object appears where the gold annotation says.";
            }
            const auto labels = mention_labels(raw);
            json mentions = json::array();
            for (const auto& wanted : payload.at("mentions")) {
                const auto label = wanted.get<std::string>();
                const auto it = std::find(labels.begin(), labels.end(), label);
                if (it == labels.end()) continue;
                const GroundedObject& g = raw.gold_objects[static_cast<std::size_t>(it - labels.begin())];
                mentions.push_back(json{{"mention", label}, {"image_index", g.position.image_index}, {"box", g.box}});
            }
            if (faulty && faults_.kind == FaultKind::OutOfRange && !mentions.empty()) {
                mentions.back()["image_index"] = static_cast<int>(raw.images.size()) + 4;
            }
            if (faulty && faults_.kind == FaultKind::DropMention && !mentions.empty()) mentions.erase(mentions.size() - 1);
            return json{{"mentions", mentions}}.dump();
        }
        case 3: {
            const auto mappings = payload.at("mappings").get<std::vector<MentionMapping>>();
            std::string text = serialize_trajectory(reassemble_trajectory(payload.at("cot_text").get<std::string>(), mappings));
            if (faulty && faults_.kind == FaultKind::PlainText) return "The target has been located.";
            if (faulty) {
                return text.find(tokens::kBoxEnd) != std::string::npos ? break_first(text, tokens::kBoxEnd)
                                                                       : break_first(text, tokens::kAnswerClose);
            }
            return text;
        }
        default: throw ClientError("mock annotator: unknown stage " + std::to_string(stage));
    }
}

RemoteEndpoint::RemoteEndpoint(RemoteEndpointConfig config) : config_(std::move(config)) {
    const std::string& url = config_.url;
    const std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http") {
        throw std::invalid_argument("annotator url must start with http:// (got '" + url + "')");
    }
    const std::size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == scheme_end + 3) throw std::invalid_argument("annotator url has no host");
    scheme_host_port_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (config_.max_attempts < 1) throw std::invalid_argument("max_attempts must be at least 1");
}

std::string RemoteEndpoint::complete(std::string_view prompt, std::span<const std::string> attachments) {
    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const std::string body =
        json{{"prompt", prompt},
             {"attachments", std::vector<std::string>(attachments.begin(), attachments.end())},
             {"max_tokens", config_.max_tokens}}
            .dump();

    std::string last_error;
    auto backoff = config_.initial_backoff;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        const auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) throw ClientError("HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            return json::parse(res->body).at("text").get<std::string>();
        } catch (const json::exception& e) {
            throw ClientError(std::string("reply without a text field: ") + e.what());
        }
    }
    throw ClientError("gave up after " + std::to_string(config_.max_attempts) + " attempts: " + last_error);
}

}  // namespace mirg
