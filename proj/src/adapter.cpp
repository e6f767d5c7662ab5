#include "pbd/adapter.hpp"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include "pbd/error.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

SubprocessClassifier::SubprocessClassifier(std::vector<std::string> argv, PromptTemplate tmpl,
                                           Verbalizer verbalizer)
    : template_(std::move(tmpl)), verbalizer_(std::move(verbalizer)), argv_(std::move(argv)) {
    template_.validate();
    verbalizer_.validate();
    if (argv_.empty()) throw Error("adapter command is empty");

    // A dead child must surface as EPIPE on write, not kill the process.
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });

    int to_child[2]; // parent writes 1, child reads 0
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
        throw Error(std::string("pipe: ") + std::strerror(errno));

    child_pid_ = fork();
    if (child_pid_ < 0) throw Error(std::string("fork: ") + std::strerror(errno));
    if (child_pid_ == 0) {
        dup2(to_child[0], STDIN_FILENO);
        dup2(from_child[1], STDOUT_FILENO);
        close(to_child[0]);
        close(to_child[1]);
        close(from_child[0]);
        close(from_child[1]);
        std::vector<char*> cargv;
        for (std::string& a : argv_) cargv.push_back(a.data());
        cargv.push_back(nullptr);
        execvp(cargv[0], cargv.data());
        std::fprintf(stderr, "adapter exec failed: %s: %s\n", cargv[0], std::strerror(errno));
        _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    to_child_ = to_child[1];
    from_child_ = from_child[0];
}

SubprocessClassifier::~SubprocessClassifier() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (child_pid_ > 0) {
        int status = 0;
        waitpid(child_pid_, &status, 0);
    }
}

ordered_json SubprocessClassifier::request(const ordered_json& req) const {
    std::lock_guard<std::mutex> lock(io_mutex_);
    std::string line = req.dump();
    line.push_back('\n');
    std::size_t sent = 0;
    while (sent < line.size()) {
        ssize_t n = write(to_child_, line.data() + sent, line.size() - sent);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("adapter process not accepting requests: ") +
                        std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }

    for (;;) {
        std::size_t nl = read_buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string reply = read_buffer_.substr(0, nl);
            read_buffer_.erase(0, nl + 1);
            ordered_json j;
            try {
                j = ordered_json::parse(reply);
            } catch (const std::exception& e) {
                throw Error(std::string("adapter reply is not JSON: ") + e.what());
            }
            if (!j.value("ok", false))
                throw Error("adapter error: " + j.value("error", std::string("unspecified")));
            return j;
        }
        char chunk[4096];
        ssize_t n = read(from_child_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("adapter read: ") + std::strerror(errno));
        }
        if (n == 0) throw Error("adapter process closed its output mid-conversation");
        read_buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

TrainRecord SubprocessClassifier::fit(const Dataset& train) {
    if (train.empty()) throw Error("cannot fit on an empty dataset");
    ordered_json req;
    req["op"] = "fit";
    ordered_json examples = ordered_json::array();
    for (const Example& e : train.examples)
        examples.push_back({{"text", e.text}, {"label", e.label}});
    req["examples"] = std::move(examples);
    req["template"] = template_.to_json();
    req["verbalizer"] = verbalizer_.to_json();
    ordered_json reply = request(req);

    TrainRecord record;
    if (reply.contains("epoch_losses"))
        record.epoch_losses = reply.at("epoch_losses").get<std::vector<double>>();
    record.final_loss = reply.value("final_loss",
                                    record.epoch_losses.empty() ? 0.0 : record.epoch_losses.back());
    fitted_ = true;
    return record;
}

std::vector<double> SubprocessClassifier::label_logits(const std::string& prompted_text) const {
    if (!fitted_) throw Error("model is not fitted");
    ordered_json reply = request({{"op", "label_logits"}, {"text", prompted_text}});
    auto logits = reply.at("logits").get<std::vector<double>>();
    if (logits.size() != verbalizer_.num_classes())
        throw Error("adapter returned " + std::to_string(logits.size()) + " logits for " +
                    std::to_string(verbalizer_.num_classes()) + " classes");
    return logits;
}

double SubprocessClassifier::label_word_log_prob(const std::string& prompted_text,
                                                 const std::string& word) const {
    if (!fitted_) throw Error("model is not fitted");
    ordered_json reply =
        request({{"op", "label_word_log_prob"}, {"text", prompted_text}, {"word", word}});
    return reply.at("log_prob").get<double>();
}

} // namespace pbd
