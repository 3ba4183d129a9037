#include "superpose/backend_factory.hpp"

#include "superpose/reference_model.hpp"
#include "superpose/remote_backend.hpp"

namespace superpose {

std::unique_ptr<Backend> make_backend(std::string_view uri) {
  if (uri == "reference-alibi" || uri == "reference") {
    return std::make_unique<ReferenceBackend>(ReferenceConfig{});
  }
  if (uri == "reference-rotary") {
    ReferenceConfig config;
    config.scheme = PositionScheme::rotary;
    return std::make_unique<ReferenceBackend>(config);
  }
  constexpr std::string_view remote = "remote:";
  if (uri.substr(0, remote.size()) == remote) return RemoteBackend::connect(uri.substr(remote.size()));
  throw Error(ErrorCode::invalid_argument, "unknown backend '" + std::string(uri) + "'");
}

}  // namespace superpose
