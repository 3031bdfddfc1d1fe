#include "crayon/service.hpp"

#include <cstdio>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace crayon {

using nlohmann::json;

namespace {

std::string url_escape(const std::string& s) {
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '/') {
            out += static_cast<char>(c);
        } else {
            char buf[4];
            std::snprintf(buf, sizeof(buf), "%%%02X", c);
            out += buf;
        }
    }
    return out;
}

std::string image_url(const std::string& subject, const std::string& view) {
    return "/api/images/" + url_escape(subject) + "/" + view;
}

const GroupedExample& example_of(const Dataset& data, const std::map<std::string, std::size_t>& index,
                                 const std::string& id) {
    const auto it = index.find(id);
    if (it == index.end()) throw std::invalid_argument("unknown image " + id);
    return data.examples[it->second];
}

std::map<std::string, std::size_t> index_images(const Dataset& data) {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < data.size(); ++i) out[data.examples[i].image_id] = i;
    return out;
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    ServiceConfig c;
    c.saliency_responses = j.value("saliency_responses", c.saliency_responses);
    c.claim_timeout = std::chrono::seconds(j.value("claim_timeout_seconds", static_cast<long>(c.claim_timeout.count())));
    c.saliency_question = j.value("saliency_question", c.saliency_question);
    c.patch_question = j.value("patch_question", c.patch_question);
    c.views = j.value("views", c.views);
    if (c.saliency_responses != 1 && c.saliency_responses != 2) {
        throw std::invalid_argument("saliency_responses must be 1 or 2");
    }
    for (const auto& v : c.views) {
        if (v != "original" && v != "overlay" && v != "red") throw std::invalid_argument("unknown view " + v);
    }
    return c;
}

std::string AnnotationTask::to_json(int assigned_count, bool complete) const {
    return json{{"task_id", task_id},
                {"subject_kind", crayon::to_string(subject_kind)},
                {"subject_id", subject_id},
                {"question_text", question_text},
                {"view_urls", view_urls},
                {"assigned_count", assigned_count},
                {"status", complete ? "complete" : "open"}}
        .dump();
}

std::string fill_question(const std::string& tmpl, const std::string& class_name) {
    std::string out = tmpl;
    const std::string key = "{class}";
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + class_name.size())) {
        out.replace(pos, key.size(), class_name);
    }
    return out;
}

std::vector<AnnotationTask> make_saliency_tasks(const std::vector<SaliencyMap>& maps, const Dataset& data,
                                                const ServiceConfig& config) {
    const auto index = index_images(data);
    std::vector<AnnotationTask> out;
    for (const auto& m : maps) {
        const auto& e = example_of(data, index, m.image_id);
        AnnotationTask t;
        t.task_id = "sal:" + m.image_id;
        t.subject_kind = SubjectKind::saliency;
        t.subject_id = m.image_id;
        t.question_text = fill_question(config.saliency_question, data.class_name(e.class_label));
        for (const auto& v : config.views) t.view_urls.push_back(image_url(m.image_id, v));
        t.required_responses = config.saliency_responses;
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<AnnotationTask> make_patch_tasks(const std::vector<ConceptPatch>& patches, const Dataset& data,
                                             const ServiceConfig& config) {
    const auto index = index_images(data);
    std::vector<AnnotationTask> out;
    for (const auto& u : unique_patches(patches)) {
        const auto& e = example_of(data, index, u.image_id);
        AnnotationTask t;
        t.task_id = "patch:" + u.patch_id;
        t.subject_kind = SubjectKind::patch;
        t.subject_id = u.patch_id;
        t.question_text = fill_question(config.patch_question, data.class_name(e.class_label));
        t.view_urls = {image_url(u.patch_id, "patch")};
        t.required_responses = 1;
        out.push_back(std::move(t));
    }
    return out;
}

int http_status(SubmitStatus s) {
    switch (s) {
        case SubmitStatus::accepted:
        case SubmitStatus::duplicate:
            return 200;
        case SubmitStatus::unknown_task:
            return 404;
        case SubmitStatus::conflict:
        case SubmitStatus::closed:
            return 409;
        default:
            return 400;
    }
}

std::string Progress::to_json() const {
    json kinds = json::object();
    for (const auto& [k, c] : per_kind) kinds[k] = {{"total", c.total}, {"complete", c.complete}};
    return json{{"total", total}, {"complete", complete}, {"per_kind", kinds}}.dump();
}

// ---- AnnotationService -----------------------------------------------------------

AnnotationService::AnnotationService(std::vector<AnnotationTask> tasks, AnnotationStore& store, ServiceConfig config,
                                     Clock clock)
    : tasks_(std::move(tasks)), state_(tasks_.size()), store_(store), config_(std::move(config)),
      clock_(std::move(clock)) {
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (!by_id_.emplace(tasks_[i].task_id, i).second) {
            throw std::invalid_argument("duplicate task id " + tasks_[i].task_id);
        }
    }
    if (!std::filesystem::exists(store_.path())) return;
    // Replay: the first answer per (task, annotator) wins, like a live run.
    for (const auto& r : store_.read_all()) {
        const auto it = by_id_.find(r.task_id);
        if (it == by_id_.end()) continue;
        state_[it->second].answers.emplace(r.annotator_id, r.answer);
    }
}

void AnnotationService::expire(State& s, std::chrono::steady_clock::time_point now) const {
    std::erase_if(s.claims, [&](const auto& c) { return now - c.second >= config_.claim_timeout; });
}

bool AnnotationService::full(std::size_t i) const {
    return static_cast<int>(state_[i].answers.size()) >= tasks_[i].required_responses;
}

std::optional<AnnotationTask> AnnotationService::next_task(const std::string& annotator) {
    if (annotator.empty()) throw std::invalid_argument("annotator id is required");
    std::lock_guard lock(mu_);
    const auto now = clock_();
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        State& s = state_[i];
        if (full(i) || s.answers.count(annotator)) continue;
        expire(s, now);
        if (s.claims.count(annotator)) {
            s.claims[annotator] = now;
            return tasks_[i];
        }
        const int used = static_cast<int>(s.answers.size() + s.claims.size());
        if (used >= tasks_[i].required_responses) continue;
        s.claims[annotator] = now;
        return tasks_[i];
    }
    return std::nullopt;
}

SubmitStatus AnnotationService::submit(const std::string& task_id, const std::string& annotator,
                                       const std::string& answer_text) {
    if (annotator.empty()) return SubmitStatus::bad_request;
    Answer answer;
    try {
        answer = parse_answer(answer_text);
    } catch (const std::invalid_argument&) {
        return SubmitStatus::bad_request;
    }
    std::lock_guard lock(mu_);
    const auto it = by_id_.find(task_id);
    if (it == by_id_.end()) return SubmitStatus::unknown_task;
    const std::size_t i = it->second;
    State& s = state_[i];
    if (const auto prev = s.answers.find(annotator); prev != s.answers.end()) {
        return prev->second == answer ? SubmitStatus::duplicate : SubmitStatus::conflict;
    }
    if (full(i)) return SubmitStatus::closed;
    expire(s, clock_());
    // Without a live claim the slot may be reserved by other annotators.
    if (!s.claims.count(annotator) &&
        static_cast<int>(s.answers.size() + s.claims.size()) >= tasks_[i].required_responses) {
        return SubmitStatus::closed;
    }
    const AnnotationTask& t = tasks_[i];
    store_.append({t.task_id, t.subject_kind, t.subject_id, annotator, answer, utc_timestamp()});
    s.answers.emplace(annotator, answer);
    s.claims.erase(annotator);
    return SubmitStatus::accepted;
}

Progress AnnotationService::progress() const {
    std::lock_guard lock(mu_);
    Progress p;
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        auto& k = p.per_kind[to_string(tasks_[i].subject_kind)];
        ++k.total;
        ++p.total;
        if (full(i)) ++k.complete, ++p.complete;
    }
    return p;
}

int AnnotationService::assigned_count(const std::string& task_id) const {
    std::lock_guard lock(mu_);
    const auto& s = state_.at(by_id_.at(task_id));
    return static_cast<int>(s.answers.size() + s.claims.size());
}

bool AnnotationService::complete(const std::string& task_id) const {
    std::lock_guard lock(mu_);
    return full(by_id_.at(task_id));
}

std::map<std::string, bool> AnnotationService::statuses() const {
    std::lock_guard lock(mu_);
    std::map<std::string, bool> out;
    for (std::size_t i = 0; i < tasks_.size(); ++i) out[tasks_[i].task_id] = full(i);
    return out;
}

// ---- ViewRenderer ----------------------------------------------------------------

ViewRenderer::ViewRenderer(const Dataset& data, const std::vector<SaliencyMap>& maps,
                           const std::vector<ConceptPatch>& patches, RenderOptions options)
    : data_(data), images_(index_images(data)), maps_(index_maps(maps)), options_(options) {
    for (const auto& p : patches) patches_[p.patch_id] = {p.image_id, p.region};
}

std::optional<std::vector<std::uint8_t>> ViewRenderer::render(const std::string& subject, const std::string& view) {
    std::lock_guard lock(mu_);
    const auto key = std::pair{subject, view};
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;

    Tensor out;
    if (view == "patch") {
        const auto p = patches_.find(subject);
        if (p == patches_.end()) return std::nullopt;
        const auto img = images_.find(p->second.first);
        if (img == images_.end()) return std::nullopt;
        out = render_patch(data_.examples[img->second].image, p->second.second, 1);
    } else {
        const auto img = images_.find(subject);
        const auto m = maps_.find(subject);
        if (img == images_.end() || m == maps_.end()) return std::nullopt;
        OverlayStyle style;
        try {
            style = parse_overlay_style(view);
        } catch (const std::invalid_argument&) {
            return std::nullopt;
        }
        out = render_overlay(data_.examples[img->second].image, m->second->values, style, options_);
    }
    return cache_.emplace(key, encode_png(out)).first->second;
}

// ---- HTTP ------------------------------------------------------------------------

std::unique_ptr<httplib::Server> make_http_server(AnnotationService& service, ViewRenderer& renderer,
                                                  const std::string& static_dir) {
    auto server = std::make_unique<httplib::Server>();
    auto error = [](httplib::Response& res, int status, const std::string& msg) {
        res.status = status;
        res.set_content(json{{"error", msg}}.dump(), "application/json");
    };

    server->Get("/api/tasks/next", [&service, error](const httplib::Request& req, httplib::Response& res) {
        const std::string who = req.get_param_value("annotator_id");
        if (who.empty()) return error(res, 400, "annotator_id is required");
        const auto task = service.next_task(who);
        if (!task) {
            res.set_content(json{{"task", nullptr}}.dump(), "application/json");
            return;
        }
        const std::string body = task->to_json(service.assigned_count(task->task_id), service.complete(task->task_id));
        res.set_content(json{{"task", json::parse(body)}}.dump(), "application/json");
    });

    server->Post("/api/responses", [&service, error](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            return error(res, 400, "body must be JSON");
        }
        if (!body.is_object() || !body.contains("task_id") || !body.contains("annotator_id") ||
            !body.contains("answer") || !body["task_id"].is_string() || !body["annotator_id"].is_string() ||
            !body["answer"].is_string()) {
            return error(res, 400, "task_id, annotator_id and answer are required strings");
        }
        const SubmitStatus s = service.submit(body["task_id"], body["annotator_id"], body["answer"]);
        switch (s) {
            case SubmitStatus::accepted:
            case SubmitStatus::duplicate:
                res.set_content(json{{"ok", true}, {"duplicate", s == SubmitStatus::duplicate}}.dump(),
                                "application/json");
                return;
            case SubmitStatus::unknown_task:
                return error(res, 404, "unknown task");
            case SubmitStatus::conflict:
                return error(res, 409, "already answered with a different answer");
            case SubmitStatus::closed:
                return error(res, 409, "task has no open slot");
            default:
                return error(res, 400, "answer must be yes or no");
        }
    });

    server->Get("/api/progress", [&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(service.progress().to_json(), "application/json");
    });

    server->Get(R"(/api/images/(.+)/([a-z]+))", [&renderer, error](const httplib::Request& req, httplib::Response& res) {
        const auto bytes = renderer.render(req.matches[1], req.matches[2]);
        if (!bytes) return error(res, 404, "unknown subject or view");
        res.set_header("Cache-Control", "public, max-age=86400");
        res.set_content(reinterpret_cast<const char*>(bytes->data()), bytes->size(), "image/png");
    });

    if (!static_dir.empty() && !server->set_mount_point("/", static_dir)) {
        throw std::runtime_error("cannot serve static files from " + static_dir);
    }
    return server;
}

}  // namespace crayon
