#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "churnrec/countergan.hpp"
#include "churnrec/forest.hpp"

namespace churnrec::tools {

// Immutable after construction; handlers only read it.
struct ServiceState {
  std::shared_ptr<const ChurnClassifier> forest;
  std::shared_ptr<const CounterGanModel> gan;
  std::vector<FeatureMeta> meta;
};

ServiceState load_service_state(const std::filesystem::path& forest,
                                const std::filesystem::path& gan_dir,
                                const std::filesystem::path& meta);

struct Response {
  int status = 200;
  nlohmann::json body;
};

Response handle_features(const ServiceState& state);
Response handle_predict(const ServiceState& state, std::string_view body);
Response handle_recourse(const ServiceState& state, std::string_view body);
Response handle_whatif(const ServiceState& state, std::string_view body);

// HTTP front end over the handlers above.
class Service {
 public:
  explicit Service(const ServiceState& state);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Port 0 picks a free port. Returns the bound port, or -1 on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called from another thread.
  bool run();
  // Waits until run() is accepting connections.
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// bind + run. Returns false when binding fails.
bool serve(const ServiceState& state, const std::string& host, int port);

}  // namespace churnrec::tools
