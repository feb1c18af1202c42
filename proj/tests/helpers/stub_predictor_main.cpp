// Minimal predictor speaking the stdio JSON line protocol, used to exercise
// the external adapter. The first argument picks a behavior:
//   uniform    - valid uniform confidence replies
//   brightflip - class 1 when any pixel value exceeds 200, else class 0
//   badsum     - confidences that sum to 0.5
//   wrongid    - replies with id + 1
//   garbage    - replies with a non-JSON line
//   sleep      - sleeps 3 s before every reply
//   die        - exits right after the ready handshake

#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualqa/base64.hpp"

using nlohmann::json;

int main(int argc, char** argv) {
  std::string mode = argc > 1 ? argv[1] : "uniform";

  std::string line;
  if (!std::getline(std::cin, line)) return 1;
  json hello = json::parse(line, nullptr, false);
  if (hello.is_discarded() || hello.value("type", "") != "hello") return 1;
  int num_classes = hello.value("num_classes", 2);
  std::cout << json{{"type", "ready"}}.dump() << "\n" << std::flush;
  if (mode == "die") return 0;

  while (std::getline(std::cin, line)) {
    json req = json::parse(line, nullptr, false);
    if (req.is_discarded() || req.value("type", "") != "predict") continue;
    std::int64_t id = req.value("id", std::int64_t{0});

    if (mode == "sleep") ::usleep(3'000'000);
    if (mode == "garbage") {
      std::cout << "not json at all\n" << std::flush;
      continue;
    }

    std::vector<double> probs(num_classes, 0.0);
    if (mode == "brightflip") {
      auto bytes = dualqa::base64_decode(req.value("pixels", ""));
      bool bright = false;
      for (std::size_t i = 0; i + 4 <= bytes.size(); i += 4) {
        float f;
        std::uint32_t bits = bytes[i] | (bytes[i + 1] << 8) |
                             (bytes[i + 2] << 16) |
                             (static_cast<std::uint32_t>(bytes[i + 3]) << 24);
        std::memcpy(&f, &bits, 4);
        if (f > 200.0f) bright = true;
      }
      probs[bright ? 1 : 0] = 1.0;
    } else if (mode == "badsum") {
      for (double& p : probs) p = 0.5 / num_classes;
    } else {
      for (double& p : probs) p = 1.0 / num_classes;
    }

    json resp = {{"type", "probs"},
                 {"id", mode == "wrongid" ? id + 1 : id},
                 {"probs", probs}};
    std::cout << resp.dump() << "\n" << std::flush;
  }
  return 0;
}
