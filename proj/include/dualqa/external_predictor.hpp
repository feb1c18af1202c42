#ifndef DUALQA_EXTERNAL_PREDICTOR_HPP
#define DUALQA_EXTERNAL_PREDICTOR_HPP

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualqa/base64.hpp"
#include "dualqa/errors.hpp"
#include "dualqa/predictor.hpp"

namespace dualqa {

struct ExternalPredictorOptions {
  double timeout_seconds = 10.0;
};

/// Bridges to a model running in any runtime via a child process speaking
/// newline-delimited JSON on stdio:
///
///   -> {"type":"hello","shape":[h,w,c],"num_classes":n}
///   <- {"type":"ready"}
///   -> {"type":"predict","id":7,"pixels":"<base64 LE float32, row-major
///                                          channel-interleaved>"}
///   <- {"type":"probs","id":7,"probs":[...]}
///
/// Each predict blocks for the response matching its id. Child exit,
/// malformed replies, id mismatches, and timeouts raise distinct errors.
/// One instance owns one subprocess and is not thread-safe; parallel
/// workers each construct their own instance.
class ExternalPredictor final : public Predictor {
 public:
  ExternalPredictor(const std::string& command, int height, int width,
                    int channels, int num_classes,
                    ExternalPredictorOptions options = {})
      : h_(height), w_(width), c_(channels), classes_(num_classes),
        options_(options) {
    // A dying child must surface as ProcessExitError, not SIGPIPE.
    ::signal(SIGPIPE, SIG_IGN);

    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw Error("external predictor: pipe() failed");
    pid_ = ::fork();
    if (pid_ < 0) throw Error("external predictor: fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), nullptr);
      _exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];

    nlohmann::json hello = {{"type", "hello"},
                            {"shape", {h_, w_, c_}},
                            {"num_classes", classes_}};
    send_line(hello.dump());
    nlohmann::json ready = read_message(options_.timeout_seconds);
    if (!ready.is_object() || ready.value("type", "") != "ready")
      throw MalformedResponseError(
          "external predictor: expected ready, got: " + ready.dump());
  }

  ExternalPredictor(const ExternalPredictor&) = delete;
  ExternalPredictor& operator=(const ExternalPredictor&) = delete;

  ~ExternalPredictor() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
        ::usleep(10'000);
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
  }

  int num_classes() const override { return classes_; }
  int input_height() const override { return h_; }
  int input_width() const override { return w_; }
  int input_channels() const override { return c_; }

 protected:
  SoftPrediction do_predict(const Image& x) const override {
    auto* self = const_cast<ExternalPredictor*>(this);
    std::int64_t id = self->next_id_++;

    std::vector<unsigned char> bytes(x.size() * 4);
    for (std::size_t i = 0; i < x.size(); ++i) {
      float f = static_cast<float>(x.pixels()[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b)
        bytes[i * 4 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    }
    nlohmann::json req = {{"type", "predict"},
                          {"id", id},
                          {"pixels", base64_encode(bytes)}};
    self->send_line(req.dump());

    nlohmann::json resp = self->read_message(options_.timeout_seconds);
    if (!resp.is_object() || resp.value("type", "") != "probs" ||
        !resp.contains("id") || !resp.contains("probs") ||
        !resp["probs"].is_array())
      throw MalformedResponseError(
          "external predictor: malformed response: " + resp.dump());
    if (resp["id"].get<std::int64_t>() != id)
      throw IdMismatchError("external predictor: expected id " +
                            std::to_string(id) + ", got " +
                            resp["id"].dump());
    std::vector<double> probs;
    for (const auto& v : resp["probs"]) {
      if (!v.is_number())
        throw MalformedResponseError("external predictor: non-numeric prob");
      probs.push_back(v.get<double>());
    }
    if (probs.size() != static_cast<std::size_t>(classes_))
      throw MalformedResponseError(
          "external predictor: expected " + std::to_string(classes_) +
          " probs, got " + std::to_string(probs.size()));
    return make_soft_prediction(std::move(probs));  // range/sum enforcement
  }

 private:
  void send_line(const std::string& line) {
    std::string payload = line + "\n";
    const char* data = payload.data();
    std::size_t left = payload.size();
    while (left > 0) {
      ssize_t n = ::write(write_fd_, data, left);
      if (n <= 0)
        throw ProcessExitError("external predictor: child closed stdin pipe");
      data += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  nlohmann::json read_message(double timeout_seconds) {
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::duration<double>(timeout_seconds);
    while (true) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (line.empty()) continue;
        nlohmann::json parsed =
            nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (parsed.is_discarded())
          throw MalformedResponseError(
              "external predictor: response is not JSON: " + line);
        return parsed;
      }
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (remaining.count() <= 0)
        throw TimeoutError("external predictor: no response within " +
                           std::to_string(timeout_seconds) + "s");
      pollfd pfd{read_fd_, POLLIN, 0};
      int pr = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
      if (pr < 0) throw Error("external predictor: poll() failed");
      if (pr == 0)
        throw TimeoutError("external predictor: no response within " +
                           std::to_string(timeout_seconds) + "s");
      char chunk[4096];
      ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n == 0)
        throw ProcessExitError("external predictor: child process exited");
      if (n < 0) throw Error("external predictor: read() failed");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  int h_, w_, c_, classes_;
  ExternalPredictorOptions options_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::int64_t next_id_ = 0;
  std::string buffer_;
};

}  // namespace dualqa

#endif  // DUALQA_EXTERNAL_PREDICTOR_HPP
