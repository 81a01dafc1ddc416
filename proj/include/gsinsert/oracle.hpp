// Protocol layer for every external semantic model interaction: instruction
// parsing, region detection, pixel pointing, rotation scoring, scale ratio
// and feedback, and image embedding.  Two interchangeable backends: a
// deterministic read-only fixture (digest -> response) and a generic HTTP
// chat endpoint.  A recording wrapper captures any backend's traffic into a
// transcript that replays through the fixture backend.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsinsert/errors.hpp"

namespace gsinsert {

struct RgbImage;

// ---------------------------------------------------------------------------
// Request envelope
// ---------------------------------------------------------------------------

enum class OracleKind {
    Parse,
    DetectRegion,
    PointTarget,
    ScoreRotation,
    RelativeScale,
    ScaleFeedback,
    EmbedImage,
};

const char* kind_name(OracleKind kind);
OracleKind kind_from_name(const std::string& name);  // throws SchemaViolation

struct OracleRequest {
    OracleKind kind = OracleKind::Parse;
    nlohmann::ordered_json payload;     // kind-specific JSON
    std::vector<std::string> images;    // raw PNG blobs
};

// SHA-256 of the canonical JSON {"image_hashes":[sha256(img)...],
// "kind":"...","payload":{...}} with lexicographically sorted keys and no
// whitespace.  Stable across platforms and payload key insertion orders.
std::string request_digest(const OracleRequest& req);

// ---------------------------------------------------------------------------
// Typed responses
// ---------------------------------------------------------------------------

struct ParsedInsertion {
    std::string object_prompt;             // what to insert
    std::string attachment_region_prompt;  // where it attaches
    std::string global_target;             // full-scene goal phrase
    std::string interaction_word;          // verb linking object and region
    std::string local_target;              // object + spatial relation phrase
    std::string spatial_word;              // spatial relation alone

    void validate() const;  // throws SchemaViolation when any field is empty
    nlohmann::ordered_json to_json() const;
    static ParsedInsertion from_json(const nlohmann::json& j);
};

struct DetectBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // closed pixel box, corners inclusive
};

enum class ScaleVerdict { Accept, Increase, Decrease };

struct ScaleFeedback {
    ScaleVerdict verdict = ScaleVerdict::Accept;
    double factor = 1.0;  // multiplicative scale adjustment, > 0
};

// ---------------------------------------------------------------------------
// Backend interface
// ---------------------------------------------------------------------------

class OracleBackend {
  public:
    virtual ~OracleBackend() = default;
    // Returns the kind-specific response JSON.  Implementations are safe for
    // concurrent calls.  Throws FixtureMiss / BackendUnavailable /
    // SchemaViolation as appropriate; responses are NOT yet validated.
    virtual nlohmann::json query(const OracleRequest& req) = 0;
};

// Validates `response` against the schema for `req.kind` (bounds come from
// the request payload).  Throws SchemaViolation on any violation.
void validate_response(const OracleRequest& req, const nlohmann::json& response);

// query + validate_response in one call.
nlohmann::json query_validated(OracleBackend& backend, const OracleRequest& req);

// ---------------------------------------------------------------------------
// Fixture backend: read-only digest -> response map
// ---------------------------------------------------------------------------

class FixtureBackend final : public OracleBackend {
  public:
    // File format: {"entries": {"<digest-hex>": {"kind": "...", "response": ...}}}
    explicit FixtureBackend(const std::string& path);
    static FixtureBackend from_json(const nlohmann::json& doc);  // in-memory
    nlohmann::json query(const OracleRequest& req) override;
    std::size_t size() const { return entries_.size(); }

  private:
    FixtureBackend() = default;
    struct Entry {
        std::string kind;
        nlohmann::json response;
    };
    std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Recording wrapper: forwards to an inner backend, captures a transcript
// ---------------------------------------------------------------------------

class RecordingBackend final : public OracleBackend {
  public:
    explicit RecordingBackend(OracleBackend& inner) : inner_(inner) {}
    nlohmann::json query(const OracleRequest& req) override;
    // Transcript format matches the fixture format, keys in append order.
    nlohmann::ordered_json transcript() const;
    void save_transcript(const std::string& path) const;
    std::size_t entry_count() const;

  private:
    OracleBackend& inner_;
    mutable std::mutex mu_;
    std::vector<std::string> order_;                    // digests, append order
    std::map<std::string, nlohmann::ordered_json> by_digest_;  // {kind, response}
};

// ---------------------------------------------------------------------------
// HTTP backend: chat-style endpoint with prompt templates
// ---------------------------------------------------------------------------

// Plain-text templates with {placeholder} substitution.  Recognized
// placeholders: {payload_json} (the canonical payload) and any top-level
// payload key, e.g. {local_target}.  Unresolved placeholders are left as-is.
struct PromptTemplates {
    std::map<std::string, std::string> by_kind;  // kind name -> template text
    static PromptTemplates defaults();
    // Loads <kind>.txt files from a directory, falling back to defaults for
    // kinds without a file.  Throws IoFailure when the directory is missing.
    static PromptTemplates load_dir(const std::string& dir);
};

std::string render_template(const std::string& tmpl, const nlohmann::json& payload);

struct HttpBackendConfig {
    std::string endpoint;       // e.g. http://host:port/v1/chat
    std::string auth_token;     // sent as "Authorization: Bearer <token>" when nonempty
    PromptTemplates templates = PromptTemplates::defaults();
    int max_attempts = 3;       // transport retries before BackendUnavailable
    int max_in_flight = 4;      // concurrent request cap
    int timeout_seconds = 30;
};

class HttpBackend final : public OracleBackend {
  public:
    explicit HttpBackend(HttpBackendConfig cfg);
    ~HttpBackend();
    nlohmann::json query(const OracleRequest& req) override;

    // Exposed for tests: builds the chat body for a request.
    nlohmann::ordered_json build_body(const OracleRequest& req) const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Reads ORACLE_ENDPOINT / ORACLE_TOKEN.  Throws ConfigError when the
// endpoint variable is missing or empty.
std::unique_ptr<HttpBackend> make_http_backend_from_env();

// Extracts the first JSON value found in a free-form model reply: the whole
// text, a fenced ```json block, or the first balanced {...} / [...] span.
// Returns std::nullopt when no JSON can be extracted.
std::optional<nlohmann::json> extract_json(const std::string& text);

// ---------------------------------------------------------------------------
// Request builders + typed decoders
// ---------------------------------------------------------------------------

OracleRequest make_parse_request(const std::string& instruction,
                                 const std::string& scene_png);
OracleRequest make_detect_request(const std::string& prompt,
                                  const std::string& view_png, int width, int height);
OracleRequest make_point_request(const std::string& local_target,
                                 const std::string& view_png, int width, int height);
// Images: the scene image first, then one render per candidate angle.
OracleRequest make_score_rotation_request(const std::string& global_target,
                                          const std::string& scene_png,
                                          const std::vector<std::string>& render_pngs,
                                          const std::vector<std::pair<double, double>>& candidate_angles_deg);
OracleRequest make_relative_scale_request(const std::string& object_prompt,
                                          const std::string& attachment_region_prompt,
                                          const std::string& scene_png);
OracleRequest make_scale_feedback_request(const std::string& global_target,
                                          const std::string& render_png,
                                          double current_scale);
OracleRequest make_embed_request(const std::string& png);

ParsedInsertion decode_parse(const nlohmann::json& response);
std::optional<DetectBox> decode_detect(const nlohmann::json& response);
std::vector<std::pair<double, double>> decode_points(const nlohmann::json& response);
int decode_score_index(const nlohmann::json& response);
double decode_lambda_rel(const nlohmann::json& response);
ScaleFeedback decode_scale_feedback(const nlohmann::json& response);
std::vector<double> decode_embedding(const nlohmann::json& response);

// High-level operation: parse an insertion instruction against a scene image.
ParsedInsertion parse_instruction(OracleBackend& backend,
                                  const std::string& instruction,
                                  const RgbImage& scene_image);

}  // namespace gsinsert
