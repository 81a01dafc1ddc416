#include "gsinsert/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <semaphore>
#include <thread>

#include "httplib.h"

#include "gsinsert/digest.hpp"
#include "gsinsert/image.hpp"

namespace gsinsert {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Kind names
// ---------------------------------------------------------------------------

const char* kind_name(OracleKind kind) {
    switch (kind) {
        case OracleKind::Parse: return "parse";
        case OracleKind::DetectRegion: return "detect_region";
        case OracleKind::PointTarget: return "point_target";
        case OracleKind::ScoreRotation: return "score_rotation";
        case OracleKind::RelativeScale: return "relative_scale";
        case OracleKind::ScaleFeedback: return "scale_feedback";
        case OracleKind::EmbedImage: return "embed_image";
    }
    throw SchemaViolation("unknown oracle kind enum value");
}

OracleKind kind_from_name(const std::string& name) {
    static const std::map<std::string, OracleKind> table = {
        {"parse", OracleKind::Parse},
        {"detect_region", OracleKind::DetectRegion},
        {"point_target", OracleKind::PointTarget},
        {"score_rotation", OracleKind::ScoreRotation},
        {"relative_scale", OracleKind::RelativeScale},
        {"scale_feedback", OracleKind::ScaleFeedback},
        {"embed_image", OracleKind::EmbedImage},
    };
    auto it = table.find(name);
    if (it == table.end()) throw SchemaViolation("unknown oracle kind: " + name);
    return it->second;
}

// ---------------------------------------------------------------------------
// Digest
// ---------------------------------------------------------------------------

std::string request_digest(const OracleRequest& req) {
    json canonical;  // plain json sorts object keys lexicographically
    canonical["kind"] = kind_name(req.kind);
    canonical["payload"] = json(req.payload);
    json hashes = json::array();
    for (const auto& img : req.images) hashes.push_back(sha256_hex(img));
    canonical["image_hashes"] = hashes;
    return sha256_hex(canonical.dump());
}

// ---------------------------------------------------------------------------
// ParsedInsertion
// ---------------------------------------------------------------------------

void ParsedInsertion::validate() const {
    auto check = [](const std::string& v, const char* name) {
        if (v.empty())
            throw SchemaViolation(std::string("parsed insertion field '") + name + "' is empty");
    };
    check(object_prompt, "object_prompt");
    check(attachment_region_prompt, "attachment_region_prompt");
    check(global_target, "global_target");
    check(interaction_word, "interaction_word");
    check(local_target, "local_target");
    check(spatial_word, "spatial_word");
}

ordered_json ParsedInsertion::to_json() const {
    return ordered_json{{"object_prompt", object_prompt},
                        {"attachment_region_prompt", attachment_region_prompt},
                        {"global_target", global_target},
                        {"interaction_word", interaction_word},
                        {"local_target", local_target},
                        {"spatial_word", spatial_word}};
}

ParsedInsertion ParsedInsertion::from_json(const json& j) {
    try {
        ParsedInsertion p;
        p.object_prompt = j.at("object_prompt").get<std::string>();
        p.attachment_region_prompt = j.at("attachment_region_prompt").get<std::string>();
        p.global_target = j.at("global_target").get<std::string>();
        p.interaction_word = j.at("interaction_word").get<std::string>();
        p.local_target = j.at("local_target").get<std::string>();
        p.spatial_word = j.at("spatial_word").get<std::string>();
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw SchemaViolation(std::string("malformed parse response: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Response validation
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void bad(const std::string& what) { throw SchemaViolation(what); }

bool finite_number(const json& j) {
    return j.is_number() && std::isfinite(j.get<double>());
}

int payload_int(const ordered_json& payload, const char* key) {
    if (!payload.contains(key) || !payload.at(key).is_number_integer())
        bad(std::string("request payload missing integer '") + key + "'");
    return payload.at(key).get<int>();
}

void validate_detect(const OracleRequest& req, const json& r) {
    if (!r.is_object() || !r.contains("found") || !r.at("found").is_boolean())
        bad("detect_region response needs boolean 'found'");
    if (!r.at("found").get<bool>()) return;
    const int w = payload_int(req.payload, "width");
    const int h = payload_int(req.payload, "height");
    if (!r.contains("box") || !r.at("box").is_array() || r.at("box").size() != 4)
        bad("detect_region response needs 'box' of 4 ints");
    const json& b = r.at("box");
    for (const auto& v : b)
        if (!v.is_number_integer()) bad("detect_region box entries must be integers");
    const int x0 = b[0].get<int>(), y0 = b[1].get<int>(), x1 = b[2].get<int>(), y1 = b[3].get<int>();
    if (!(0 <= x0 && x0 <= x1 && x1 < w && 0 <= y0 && y0 <= y1 && y1 < h))
        bad("detect_region box out of bounds or inverted");
}

void validate_points(const OracleRequest& req, const json& r) {
    const int w = payload_int(req.payload, "width");
    const int h = payload_int(req.payload, "height");
    if (!r.is_object() || !r.contains("points") || !r.at("points").is_array() ||
        r.at("points").empty())
        bad("point_target response needs nonempty 'points' array");
    for (const auto& p : r.at("points")) {
        if (!p.is_array() || p.size() != 2 || !finite_number(p[0]) || !finite_number(p[1]))
            bad("point_target points must be finite [u,v] pairs");
        const double u = p[0].get<double>(), v = p[1].get<double>();
        if (!(u >= 0.0 && u < w && v >= 0.0 && v < h))
            bad("point_target point outside image bounds");
    }
}

void validate_score(const OracleRequest& req, const json& r) {
    const int n = payload_int(req.payload, "candidate_count");
    if (!r.is_object() || !r.contains("index") || !r.at("index").is_number_integer())
        bad("score_rotation response needs integer 'index'");
    const int idx = r.at("index").get<int>();
    if (idx < 0 || idx >= n) bad("score_rotation index out of range");
}

void validate_lambda(const json& r) {
    if (!r.is_object() || !r.contains("lambda_rel") || !finite_number(r.at("lambda_rel")) ||
        r.at("lambda_rel").get<double>() <= 0.0)
        bad("relative_scale response needs finite 'lambda_rel' > 0");
}

void validate_feedback(const json& r) {
    if (!r.is_object() || !r.contains("verdict") || !r.at("verdict").is_string())
        bad("scale_feedback response needs string 'verdict'");
    const std::string v = r.at("verdict").get<std::string>();
    if (v != "accept" && v != "increase" && v != "decrease")
        bad("scale_feedback verdict must be accept|increase|decrease");
    if (!r.contains("factor") || !finite_number(r.at("factor")) ||
        r.at("factor").get<double>() <= 0.0)
        bad("scale_feedback response needs finite 'factor' > 0");
}

void validate_embedding(const json& r) {
    if (!r.is_object() || !r.contains("embedding") || !r.at("embedding").is_array() ||
        r.at("embedding").empty())
        bad("embed_image response needs nonempty 'embedding' array");
    double norm_sq = 0.0;
    for (const auto& v : r.at("embedding")) {
        if (!finite_number(v)) bad("embed_image embedding entries must be finite numbers");
        const double x = v.get<double>();
        norm_sq += x * x;
    }
    if (std::abs(std::sqrt(norm_sq) - 1.0) > 1e-6)
        bad("embed_image embedding must be unit-norm");
}

}  // namespace

void validate_response(const OracleRequest& req, const json& response) {
    try {
        switch (req.kind) {
            case OracleKind::Parse:
                ParsedInsertion::from_json(response);
                return;
            case OracleKind::DetectRegion: validate_detect(req, response); return;
            case OracleKind::PointTarget: validate_points(req, response); return;
            case OracleKind::ScoreRotation: validate_score(req, response); return;
            case OracleKind::RelativeScale: validate_lambda(response); return;
            case OracleKind::ScaleFeedback: validate_feedback(response); return;
            case OracleKind::EmbedImage: validate_embedding(response); return;
        }
        bad("unknown oracle kind");
    } catch (const json::exception& e) {
        bad(std::string("malformed oracle response: ") + e.what());
    }
}

json query_validated(OracleBackend& backend, const OracleRequest& req) {
    json response = backend.query(req);
    validate_response(req, response);
    return response;
}

// ---------------------------------------------------------------------------
// FixtureBackend
// ---------------------------------------------------------------------------

FixtureBackend FixtureBackend::from_json(const json& doc) {
    FixtureBackend fb;
    if (!doc.is_object() || !doc.contains("entries") || !doc.at("entries").is_object())
        throw MalformedFixture("fixture must be an object with an 'entries' object");
    for (const auto& [digest, entry] : doc.at("entries").items()) {
        if (!entry.is_object() || !entry.contains("kind") || !entry.at("kind").is_string() ||
            !entry.contains("response"))
            throw MalformedFixture("fixture entry '" + digest +
                                   "' needs string 'kind' and 'response'");
        try {
            kind_from_name(entry.at("kind").get<std::string>());  // known kind check
        } catch (const SchemaViolation& e) {
            throw MalformedFixture("fixture entry '" + digest + "': " + e.what());
        }
        fb.entries_[digest] = Entry{entry.at("kind").get<std::string>(), entry.at("response")};
    }
    return fb;
}

FixtureBackend::FixtureBackend(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_file_bytes(path));
    } catch (const json::exception& e) {
        throw MalformedFixture("fixture file '" + path + "' is not valid JSON: " + e.what());
    } catch (const IoFailure& e) {
        throw MalformedFixture("fixture file '" + path + "' is unreadable: " + e.what());
    }
    try {
        *this = from_json(doc);
    } catch (const MalformedFixture& e) {
        throw MalformedFixture("fixture file '" + path + "': " + e.what());
    }
}

json FixtureBackend::query(const OracleRequest& req) {
    const std::string digest = request_digest(req);
    auto it = entries_.find(digest);
    if (it == entries_.end())
        throw FixtureMiss(std::string("no fixture entry for ") + kind_name(req.kind) +
                          " request " + digest);
    if (it->second.kind != kind_name(req.kind))
        throw MalformedFixture("fixture entry " + digest + " stored kind '" + it->second.kind +
                               "' but request kind is '" + kind_name(req.kind) + "'");
    return it->second.response;
}

// ---------------------------------------------------------------------------
// RecordingBackend
// ---------------------------------------------------------------------------

json RecordingBackend::query(const OracleRequest& req) {
    json response = inner_.query(req);
    const std::string digest = request_digest(req);
    std::lock_guard<std::mutex> lock(mu_);
    if (by_digest_.find(digest) == by_digest_.end()) order_.push_back(digest);
    by_digest_[digest] = ordered_json{{"kind", kind_name(req.kind)}, {"response", response}};
    return response;
}

ordered_json RecordingBackend::transcript() const {
    std::lock_guard<std::mutex> lock(mu_);
    ordered_json entries = ordered_json::object();
    for (const auto& digest : order_) entries[digest] = by_digest_.at(digest);
    return ordered_json{{"entries", entries}};
}

void RecordingBackend::save_transcript(const std::string& path) const {
    write_file_bytes(path, transcript().dump(2) + "\n");
}

std::size_t RecordingBackend::entry_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return order_.size();
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.by_kind["parse"] =
        "Parse this scene-editing instruction into structured fields. Reply with a JSON "
        "object {\"object_prompt\", \"attachment_region_prompt\", \"global_target\", "
        "\"interaction_word\", \"local_target\", \"spatial_word\"} — all nonempty strings.\n"
        "Instruction: {instruction}\n\nRequest payload:\n{payload_json}";
    t.by_kind["detect_region"] =
        "Localize the 2D bounding box of \"{prompt}\" in the attached {width}x{height} image. "
        "Reply with JSON {\"found\": true, \"box\": [x0, y0, x1, y1]} using inclusive integer "
        "pixel corners, or {\"found\": false} when absent.\n\nRequest payload:\n{payload_json}";
    t.by_kind["point_target"] =
        "Point the position to add {local_target}. The attached image is {width}x{height}. "
        "Reply with JSON {\"points\": [[u, v], ...]} in pixel coordinates.\n\n"
        "Request payload:\n{payload_json}";
    t.by_kind["score_rotation"] =
        "The attached renders show candidate object orientations for: {global_target}. "
        "Select the optimal rotation and reply with JSON {\"index\": i} for the best render "
        "(0-based).\n\nRequest payload:\n{payload_json}";
    t.by_kind["relative_scale"] =
        "Estimate a reasonable size ratio between \"{object_prompt}\" and "
        "\"{attachment_region_prompt}\" in the attached scene. Reply with JSON "
        "{\"lambda_rel\": ratio} where ratio > 0.\n\nRequest payload:\n{payload_json}";
    t.by_kind["scale_feedback"] =
        "The attached render shows an inserted object at scale {current_scale} for: "
        "{global_target}. Reply with JSON {\"verdict\": \"accept\"|\"increase\"|\"decrease\", "
        "\"factor\": f} where f > 0 multiplies the current scale.\n\n"
        "Request payload:\n{payload_json}";
    t.by_kind["embed_image"] =
        "Embed the attached image. Reply with JSON {\"embedding\": [...]} as a unit-norm "
        "vector.\n\nRequest payload:\n{payload_json}";
    return t;
}

PromptTemplates PromptTemplates::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoFailure("template directory not found: " + dir);
    PromptTemplates t = defaults();
    for (auto& [kind, tmpl] : t.by_kind) {
        const fs::path p = fs::path(dir) / (kind + ".txt");
        if (fs::exists(p)) tmpl = read_file_bytes(p.string());
    }
    return t;
}

std::string render_template(const std::string& tmpl, const json& payload) {
    auto value_text = [&payload](const std::string& key) -> std::optional<std::string> {
        if (key == "payload_json") return json(payload).dump();
        if (!payload.is_object() || !payload.contains(key)) return std::nullopt;
        const json& v = payload.at(key);
        if (v.is_string()) return v.get<std::string>();
        return v.dump();
    };
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const std::size_t close = tmpl.find('}', i + 1);
            if (close != std::string::npos) {
                const std::string key = tmpl.substr(i + 1, close - i - 1);
                if (auto v = value_text(key)) {
                    out += *v;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

namespace {

std::string base64_encode(const std::string& bytes) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                           static_cast<unsigned char>(bytes[i + 2]);
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += alphabet[v & 63];
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

// Splits "http://host:port/some/path" into client base and request path.
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    const std::size_t scheme = endpoint.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("endpoint must start with http:// — got '" + endpoint + "'");
    const std::size_t slash = endpoint.find('/', scheme + 3);
    if (slash == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, slash), endpoint.substr(slash)};
}

std::string reply_text(const json& body) {
    try {
        if (body.contains("choices") && body.at("choices").is_array() &&
            !body.at("choices").empty()) {
            const json& c = body.at("choices")[0];
            if (c.contains("message") && c.at("message").contains("content") &&
                c.at("message").at("content").is_string())
                return c.at("message").at("content").get<std::string>();
            if (c.contains("text") && c.at("text").is_string())
                return c.at("text").get<std::string>();
        }
        if (body.contains("content") && body.at("content").is_string())
            return body.at("content").get<std::string>();
    } catch (const json::exception&) {
    }
    return body.dump();
}

}  // namespace

std::optional<json> extract_json(const std::string& text) {
    {
        json whole = json::parse(text, nullptr, false);
        if (!whole.is_discarded()) return whole;
    }
    // Fenced block: take the content between the first pair of ``` fences.
    std::size_t fence = text.find("```");
    if (fence != std::string::npos) {
        std::size_t start = text.find('\n', fence);
        const std::size_t end = text.find("```", fence + 3);
        if (start != std::string::npos && end != std::string::npos && start < end) {
            json fenced = json::parse(text.substr(start + 1, end - start - 1), nullptr, false);
            if (!fenced.is_discarded()) return fenced;
        }
    }
    // First balanced brace/bracket span, string- and escape-aware.
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{' && text[i] != '[') continue;
        int depth = 0;
        bool in_string = false;
        for (std::size_t j = i; j < text.size(); ++j) {
            const char c = text[j];
            if (in_string) {
                if (c == '\\')
                    ++j;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"')
                in_string = true;
            else if (c == '{' || c == '[')
                ++depth;
            else if (c == '}' || c == ']') {
                --depth;
                if (depth == 0) {
                    json span = json::parse(text.substr(i, j - i + 1), nullptr, false);
                    if (!span.is_discarded()) return span;
                    break;  // malformed span; try the next opener
                }
            }
        }
    }
    return std::nullopt;
}

struct HttpBackend::Impl {
    HttpBackendConfig cfg;
    std::string base;
    std::string path;
    std::counting_semaphore<4096> slots;

    explicit Impl(HttpBackendConfig c)
        : cfg(std::move(c)), slots(std::max(1, cfg.max_in_flight)) {
        std::tie(base, path) = split_endpoint(cfg.endpoint);
        if (cfg.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    }
};

HttpBackend::HttpBackend(HttpBackendConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
HttpBackend::~HttpBackend() = default;

ordered_json HttpBackend::build_body(const OracleRequest& req) const {
    const auto& templates = impl_->cfg.templates.by_kind;
    auto it = templates.find(kind_name(req.kind));
    const std::string tmpl = it != templates.end()
                                 ? it->second
                                 : PromptTemplates::defaults().by_kind.at(kind_name(req.kind));
    ordered_json content = ordered_json::array();
    content.push_back({{"type", "text"}, {"text", render_template(tmpl, req.payload)}});
    for (const auto& img : req.images)
        content.push_back({{"type", "image_png_base64"}, {"data", base64_encode(img)}});
    return ordered_json{
        {"messages", ordered_json::array({ordered_json{{"role", "user"}, {"content", content}}})}};
}

json HttpBackend::query(const OracleRequest& req) {
    impl_->slots.acquire();
    struct Release {
        std::counting_semaphore<4096>& s;
        ~Release() { s.release(); }
    } release{impl_->slots};

    const std::string body = build_body(req).dump();
    std::string last_error = "no attempt made";
    for (int attempt = 1; attempt <= impl_->cfg.max_attempts; ++attempt) {
        httplib::Client client(impl_->base);
        client.set_connection_timeout(impl_->cfg.timeout_seconds, 0);
        client.set_read_timeout(impl_->cfg.timeout_seconds, 0);
        httplib::Headers headers;
        if (!impl_->cfg.auth_token.empty())
            headers.emplace("Authorization", "Bearer " + impl_->cfg.auth_token);
        auto res = client.Post(impl_->path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
        } else if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
        } else {
            json reply_body = json::parse(res->body, nullptr, false);
            std::string text = reply_body.is_discarded() ? res->body : reply_text(reply_body);
            std::optional<json> extracted = extract_json(text);
            if (!extracted)
                throw SchemaViolation(std::string("no JSON found in ") + kind_name(req.kind) +
                                      " reply: " + text.substr(0, 200));
            validate_response(req, *extracted);
            return *extracted;
        }
        if (attempt < impl_->cfg.max_attempts)
            std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    }
    throw BackendUnavailable("endpoint " + impl_->cfg.endpoint + " failed after " +
                             std::to_string(impl_->cfg.max_attempts) +
                             " attempts; last error: " + last_error);
}

std::unique_ptr<HttpBackend> make_http_backend_from_env() {
    const char* endpoint = std::getenv("ORACLE_ENDPOINT");
    if (endpoint == nullptr || *endpoint == '\0')
        throw ConfigError("ORACLE_ENDPOINT is not set");
    HttpBackendConfig cfg;
    cfg.endpoint = endpoint;
    if (const char* token = std::getenv("ORACLE_TOKEN")) cfg.auth_token = token;
    return std::make_unique<HttpBackend>(std::move(cfg));
}

// ---------------------------------------------------------------------------
// Request builders
// ---------------------------------------------------------------------------

OracleRequest make_parse_request(const std::string& instruction, const std::string& scene_png) {
    if (instruction.empty()) throw SchemaViolation("instruction must be nonempty");
    return OracleRequest{OracleKind::Parse, ordered_json{{"instruction", instruction}},
                         {scene_png}};
}

OracleRequest make_detect_request(const std::string& prompt, const std::string& view_png,
                                  int width, int height) {
    return OracleRequest{
        OracleKind::DetectRegion,
        ordered_json{{"prompt", prompt}, {"width", width}, {"height", height}},
        {view_png}};
}

OracleRequest make_point_request(const std::string& local_target, const std::string& view_png,
                                 int width, int height) {
    return OracleRequest{
        OracleKind::PointTarget,
        ordered_json{{"local_target", local_target}, {"width", width}, {"height", height}},
        {view_png}};
}

OracleRequest make_score_rotation_request(
    const std::string& global_target, const std::string& scene_png,
    const std::vector<std::string>& render_pngs,
    const std::vector<std::pair<double, double>>& candidate_angles_deg) {
    if (render_pngs.size() != candidate_angles_deg.size())
        throw SchemaViolation("score_rotation needs one render per candidate angle");
    if (render_pngs.empty()) throw SchemaViolation("score_rotation needs at least one candidate");
    ordered_json angles = ordered_json::array();
    for (const auto& [az, el] : candidate_angles_deg)
        angles.push_back(ordered_json::array({az, el}));
    std::vector<std::string> images;
    images.reserve(render_pngs.size() + 1);
    images.push_back(scene_png);
    images.insert(images.end(), render_pngs.begin(), render_pngs.end());
    return OracleRequest{OracleKind::ScoreRotation,
                         ordered_json{{"global_target", global_target},
                                      {"candidate_count", static_cast<int>(render_pngs.size())},
                                      {"candidate_angles", angles}},
                         std::move(images)};
}

OracleRequest make_relative_scale_request(const std::string& object_prompt,
                                          const std::string& attachment_region_prompt,
                                          const std::string& scene_png) {
    return OracleRequest{OracleKind::RelativeScale,
                         ordered_json{{"object_prompt", object_prompt},
                                      {"attachment_region_prompt", attachment_region_prompt}},
                         {scene_png}};
}

OracleRequest make_scale_feedback_request(const std::string& global_target,
                                          const std::string& render_png, double current_scale) {
    return OracleRequest{
        OracleKind::ScaleFeedback,
        ordered_json{{"global_target", global_target}, {"current_scale", current_scale}},
        {render_png}};
}

OracleRequest make_embed_request(const std::string& png) {
    return OracleRequest{OracleKind::EmbedImage, ordered_json::object(), {png}};
}

// ---------------------------------------------------------------------------
// Typed decoders
// ---------------------------------------------------------------------------

ParsedInsertion decode_parse(const json& response) { return ParsedInsertion::from_json(response); }

std::optional<DetectBox> decode_detect(const json& response) {
    try {
        if (!response.at("found").get<bool>()) return std::nullopt;
        const json& b = response.at("box");
        return DetectBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                         b.at(3).get<int>()};
    } catch (const json::exception& e) {
        throw SchemaViolation(std::string("malformed detect_region response: ") + e.what());
    }
}

std::vector<std::pair<double, double>> decode_points(const json& response) {
    try {
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : response.at("points"))
            pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        return pts;
    } catch (const json::exception& e) {
        throw SchemaViolation(std::string("malformed point_target response: ") + e.what());
    }
}

int decode_score_index(const json& response) {
    try {
        return response.at("index").get<int>();
    } catch (const json::exception& e) {
        throw SchemaViolation(std::string("malformed score_rotation response: ") + e.what());
    }
}

double decode_lambda_rel(const json& response) {
    try {
        return response.at("lambda_rel").get<double>();
    } catch (const json::exception& e) {
        throw SchemaViolation(std::string("malformed relative_scale response: ") + e.what());
    }
}

ScaleFeedback decode_scale_feedback(const json& response) {
    try {
        const std::string v = response.at("verdict").get<std::string>();
        ScaleFeedback fb;
        fb.factor = response.at("factor").get<double>();
        if (v == "accept")
            fb.verdict = ScaleVerdict::Accept;
        else if (v == "increase")
            fb.verdict = ScaleVerdict::Increase;
        else if (v == "decrease")
            fb.verdict = ScaleVerdict::Decrease;
        else
            throw SchemaViolation("unknown scale_feedback verdict: " + v);
        return fb;
    } catch (const json::exception& e) {
        throw SchemaViolation(std::string("malformed scale_feedback response: ") + e.what());
    }
}

std::vector<double> decode_embedding(const json& response) {
    try {
        return response.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw SchemaViolation(std::string("malformed embed_image response: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// High-level operations
// ---------------------------------------------------------------------------

ParsedInsertion parse_instruction(OracleBackend& backend, const std::string& instruction,
                                  const RgbImage& scene_image) {
    const OracleRequest req = make_parse_request(instruction, png_encode_rgb(scene_image));
    return decode_parse(query_validated(backend, req));
}

}  // namespace gsinsert
