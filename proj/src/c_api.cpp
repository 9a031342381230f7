#include "dempc.h"

#include "dempc/errors.hpp"
#include "dempc/pipeline.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <new>

struct dempc_session {
  dempc::ProjectConfig cfg;
  std::string out_dir;
  bool use_cache = true;
  std::unique_ptr<dempc::Workspace> ws;

  dempc::Workspace& workspace() {
    if (!ws) ws = std::make_unique<dempc::Workspace>(cfg, out_dir, use_cache);
    return *ws;
  }
};

struct dempc_model {
  dempc::NnParams params;
};

namespace {

thread_local std::string g_last_error;

dempc_status fail(dempc_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
dempc_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return DEMPC_OK;
  } catch (const dempc::StructuralError& e) {
    return fail(DEMPC_E_STRUCTURAL, e.what());
  } catch (const dempc::NumericError& e) {
    return fail(DEMPC_E_NUMERIC, e.what());
  } catch (const dempc::DomainError& e) {
    return fail(DEMPC_E_DOMAIN, e.what());
  } catch (const dempc::IoError& e) {
    return fail(DEMPC_E_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DEMPC_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DEMPC_E_INTERNAL, e.what());
  } catch (...) {
    return fail(DEMPC_E_INTERNAL, "unknown error");
  }
}

dempc_status copy_out(const std::string& text, char* buf, std::size_t len, std::size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (!buf) return needed ? DEMPC_OK : fail(DEMPC_E_INVALID_ARGUMENT, "null buffer");
  if (len < text.size() + 1) return fail(DEMPC_E_INVALID_ARGUMENT, "buffer too small");
  std::memcpy(buf, text.c_str(), text.size() + 1);
  return DEMPC_OK;
}

}  // namespace

#define DEMPC_REQUIRE(cond, what) \
  if (!(cond)) return fail(DEMPC_E_INVALID_ARGUMENT, what)

extern "C" {

const char* dempc_version(void) { return dempc::kVersion; }

const char* dempc_status_name(dempc_status status) {
  switch (status) {
    case DEMPC_OK: return "ok";
    case DEMPC_E_INVALID_ARGUMENT: return "invalid argument";
    case DEMPC_E_STRUCTURAL: return "structural error";
    case DEMPC_E_NUMERIC: return "numeric error";
    case DEMPC_E_DOMAIN: return "domain error";
    case DEMPC_E_IO: return "i/o error";
    case DEMPC_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* dempc_last_error(void) { return g_last_error.c_str(); }

dempc_status dempc_session_open(const char* config_path, const char* out_dir, int use_cache, dempc_session** out) {
  DEMPC_REQUIRE(out, "null session output");
  DEMPC_REQUIRE(out_dir && *out_dir, "empty output directory");
  *out = nullptr;
  return guarded([&] {
    auto s = std::make_unique<dempc_session>();
    s->cfg = config_path ? dempc::load_project_config(config_path) : dempc::default_project_config();
    s->cfg.validate();
    s->out_dir = out_dir;
    s->use_cache = use_cache != 0;
    *out = s.release();
  });
}

void dempc_session_close(dempc_session* session) { delete session; }

dempc_status dempc_session_override(dempc_session* session, const char* assignment) {
  DEMPC_REQUIRE(session && assignment, "null argument");
  return guarded([&] {
    dempc::ProjectConfig cfg = session->cfg;
    dempc::apply_override(cfg, assignment);
    cfg.validate();
    session->cfg = std::move(cfg);
    session->ws.reset();
  });
}

dempc_status dempc_session_config_json(const dempc_session* session, char* buf, size_t len, size_t* needed) {
  DEMPC_REQUIRE(session, "null session");
  return copy_out(dempc::to_json(session->cfg), buf, len, needed);
}

dempc_status dempc_session_config_hash(const dempc_session* session, char* buf, size_t len) {
  DEMPC_REQUIRE(session, "null session");
  return copy_out(dempc::hex64(dempc::config_hash(session->cfg)), buf, len, nullptr);
}

dempc_status dempc_tune_hparams(dempc_session* session) {
  DEMPC_REQUIRE(session, "null session");
  return guarded([&] {
    session->workspace().tune();
    session->workspace().write_manifest();
  });
}

dempc_status dempc_train_fnn(dempc_session* session, int tuned) {
  DEMPC_REQUIRE(session, "null session");
  return guarded([&] {
    session->workspace().train_fnn(tuned != 0);
    session->workspace().write_manifest();
  });
}

dempc_status dempc_gen_ident_data(dempc_session* session) {
  DEMPC_REQUIRE(session, "null session");
  return guarded([&] {
    session->workspace().ident();
    session->workspace().write_manifest();
  });
}

dempc_status dempc_train_rnn(dempc_session* session) {
  DEMPC_REQUIRE(session, "null session");
  return guarded([&] {
    session->workspace().train_rnn();
    session->workspace().write_manifest();
  });
}

dempc_status dempc_simulate(dempc_session* session, const char* scenario, const char* cycle, dempc_metrics* metrics) {
  DEMPC_REQUIRE(session && scenario && cycle, "null argument");
  return guarded([&] {
    dempc::Workspace& ws = session->workspace();
    const dempc::ScenarioResult r = ws.simulate(scenario, dempc::resolve_cycle(cycle));
    ws.write_manifest();
    if (metrics) {
      const auto& m = r.metrics;
      *metrics = {m.cumulative_nox, m.peak_nox, m.average_nox,  m.average_soot,      m.peak_soot,
                  m.violation_ratio, m.total_fuel, r.solves, r.converged, r.plant_clamp_events};
    }
  });
}

dempc_status dempc_compare_scenarios(dempc_session* session) {
  DEMPC_REQUIRE(session, "null session");
  return guarded([&] {
    dempc::Workspace& ws = session->workspace();
    ws.compare(ws.scenarios());
    ws.write_manifest();
  });
}

dempc_status dempc_pipeline(dempc_session* session) {
  DEMPC_REQUIRE(session, "null session");
  return guarded([&] { session->workspace().pipeline(); });
}

dempc_status dempc_soot_limit(dempc_session* session, double* out) {
  DEMPC_REQUIRE(session && out, "null argument");
  return guarded([&] { *out = session->workspace().soot_limit(); });
}

dempc_status dempc_write_manifest(dempc_session* session) {
  DEMPC_REQUIRE(session, "null session");
  return guarded([&] { session->workspace().write_manifest(); });
}

dempc_status dempc_model_load(const char* path, dempc_model** out) {
  DEMPC_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new dempc_model{dempc::load_params(std::string(path))}; });
}

void dempc_model_free(dempc_model* model) { delete model; }

dempc_status dempc_model_dims(const dempc_model* model, size_t* input_dim, size_t* output_dim) {
  DEMPC_REQUIRE(model && input_dim && output_dim, "null argument");
  *input_dim = static_cast<size_t>(model->params.input_dim());
  *output_dim = static_cast<size_t>(model->params.output_dim());
  return DEMPC_OK;
}

dempc_status dempc_model_predict(const dempc_model* model, const double* input, size_t input_len, double* output,
                                 size_t output_len) {
  DEMPC_REQUIRE(model && input && output, "null argument");
  const auto& p = model->params;
  if (input_len != static_cast<size_t>(p.input_dim()) || output_len != static_cast<size_t>(p.output_dim()))
    return fail(DEMPC_E_STRUCTURAL, "input or output length does not match the model");
  return guarded([&] {
    Eigen::Map<const Eigen::VectorXd> x(input, static_cast<Eigen::Index>(input_len));
    const Eigen::VectorXd y = p.output_norm.denormalize(dempc::forward(p, p.input_norm.normalize(x)));
    for (size_t i = 0; i < output_len; ++i) {
      if (!std::isfinite(y(static_cast<Eigen::Index>(i)))) throw dempc::NumericError("non-finite model output");
      output[i] = y(static_cast<Eigen::Index>(i));
    }
  });
}

}  // extern "C"
