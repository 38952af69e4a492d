#pragma once

#include <memory>
#include <string>

#include "lcm/controller.hpp"
#include "lcm/delegation.hpp"
#include "lcm/file_gateway.hpp"
#include "lcm/map_engine.hpp"
#include "lcm/memory_tools.hpp"
#include "lcm/provider.hpp"
#include "lcm/session_runtime.hpp"
#include "lcm/store.hpp"
#include "lcm/summarizer.hpp"
#include "lcm/tokenizer.hpp"

namespace lcm {

struct EngineConfig {
    std::string store_path = ":memory:";
    ControllerConfig controller;
    GatewayConfig gateway;
    SummarizerConfig summarizer;
    MemoryToolsConfig memory;
    RuntimeConfig runtime;
    DelegationConfig delegation;
};

// Owns and wires every component around one store. The runtime is installed
// as the turn driver for delegation and as the item agent runner for maps,
// so sub-agents and agentic map items run through the same loop.
class Engine {
public:
    explicit Engine(EngineConfig config, ProviderSlots providers,
                    std::shared_ptr<TokenCounter> counter = nullptr);

    SessionRecord create_root_session();

    std::shared_ptr<Store> store() { return store_; }
    Controller& controller() { return *controller_; }
    FileGateway& gateway() { return *gateway_; }
    MemoryTools& memory() { return *memory_; }
    MapEngine& maps() { return *maps_; }
    Delegation& delegation() { return *delegation_; }
    SessionRuntime& runtime() { return *runtime_; }
    const ProviderSlots& providers() const { return providers_; }
    const TokenCounter& counter() const { return *counter_; }
    const EngineConfig& config() const { return config_; }

private:
    EngineConfig config_;
    ProviderSlots providers_;
    std::shared_ptr<TokenCounter> counter_;
    std::shared_ptr<Store> store_;
    std::shared_ptr<Summarizer> summarizer_;
    std::shared_ptr<Controller> controller_;
    std::shared_ptr<FileGateway> gateway_;
    std::shared_ptr<MemoryTools> memory_;
    std::shared_ptr<MapEngine> maps_;
    std::shared_ptr<Delegation> delegation_;
    std::shared_ptr<SessionRuntime> runtime_;
};

}  // namespace lcm
