#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crayon/annotations.hpp"
#include "crayon/concepts.hpp"
#include "crayon/data.hpp"
#include "crayon/saliency.hpp"

namespace httplib {
class Server;
}

namespace crayon {

struct ServiceConfig {
    // 2 for the two-annotator protocol, 1 for single-annotator (oracle) mode.
    int saliency_responses = 2;
    std::chrono::seconds claim_timeout{600};
    // "{class}" is replaced by the class name of the subject image.
    std::string saliency_question = "Is the strong highlight mainly on the {class}?";
    std::string patch_question = "Is the red box mainly on the {class}?";
    // Saliency views shown to annotators; {"overlay"} for face-like data.
    std::vector<std::string> views = {"original", "overlay", "red"};

    static ServiceConfig from_json(const std::string& text);
};

struct AnnotationTask {
    std::string task_id;
    SubjectKind subject_kind = SubjectKind::saliency;
    std::string subject_id;
    std::string question_text;
    std::vector<std::string> view_urls;
    int required_responses = 1;

    std::string to_json(int assigned_count, bool complete) const;
};

std::string fill_question(const std::string& tmpl, const std::string& class_name);

// "sal:<image_id>" per map, question from the image's class.
std::vector<AnnotationTask> make_saliency_tasks(const std::vector<SaliencyMap>& maps, const Dataset& data,
                                                const ServiceConfig& config);
// "patch:<patch_id>" per unique patch.
std::vector<AnnotationTask> make_patch_tasks(const std::vector<ConceptPatch>& patches, const Dataset& data,
                                             const ServiceConfig& config);

enum class SubmitStatus { accepted, duplicate, unknown_task, conflict, closed, bad_request };
int http_status(SubmitStatus s);

struct Progress {
    struct Counts {
        int total = 0;
        int complete = 0;
    };
    int total = 0;
    int complete = 0;
    std::map<std::string, Counts> per_kind;
    std::string to_json() const;
};

// Task queue over an append-only store. Claims are lazy: fetching a task
// reserves one response slot for the annotator until it answers or the claim
// times out. Existing store records are replayed on construction.
class AnnotationService {
  public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    AnnotationService(std::vector<AnnotationTask> tasks, AnnotationStore& store, ServiceConfig config = {},
                      Clock clock = [] { return std::chrono::steady_clock::now(); });

    // Next open task this annotator has not answered, or nullopt when none is left.
    std::optional<AnnotationTask> next_task(const std::string& annotator_id);
    SubmitStatus submit(const std::string& task_id, const std::string& annotator_id, const std::string& answer);
    Progress progress() const;

    int assigned_count(const std::string& task_id) const;
    bool complete(const std::string& task_id) const;
    std::map<std::string, bool> statuses() const;
    const std::vector<AnnotationTask>& tasks() const { return tasks_; }

  private:
    struct State {
        std::map<std::string, Answer> answers;  // annotator -> answer
        std::map<std::string, std::chrono::steady_clock::time_point> claims;
    };

    void expire(State& s, std::chrono::steady_clock::time_point now) const;
    bool full(std::size_t index) const;

    std::vector<AnnotationTask> tasks_;
    std::map<std::string, std::size_t> by_id_;
    std::vector<State> state_;
    AnnotationStore& store_;
    ServiceConfig config_;
    Clock clock_;
    mutable std::mutex mu_;
};

// PNG views for saliency subjects (original / overlay / red) and patch
// subjects (red rectangle). Bytes are cached and deterministic.
class ViewRenderer {
  public:
    ViewRenderer(const Dataset& data, const std::vector<SaliencyMap>& maps, const std::vector<ConceptPatch>& patches,
                 RenderOptions options = {});
    // nullopt for an unknown subject or view.
    std::optional<std::vector<std::uint8_t>> render(const std::string& subject_id, const std::string& view);

  private:
    const Dataset& data_;
    std::map<std::string, std::size_t> images_;
    MapIndex maps_;
    std::map<std::string, std::pair<std::string, Region>> patches_;
    RenderOptions options_;
    std::map<std::pair<std::string, std::string>, std::vector<std::uint8_t>> cache_;
    std::mutex mu_;
};

// REST routes:
//   GET  /api/tasks/next?annotator_id=...
//   POST /api/responses {task_id, annotator_id, answer}
//   GET  /api/progress
//   GET  /api/images/{subject_id}/{view}
// Files under static_dir (if given) are served at "/".
std::unique_ptr<httplib::Server> make_http_server(AnnotationService& service, ViewRenderer& renderer,
                                                  const std::string& static_dir = "");

}  // namespace crayon
