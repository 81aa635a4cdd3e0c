"""Quick invariant checks on a short noiseless run (``intcl check``)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import Gains, icl_term
from .model import lookup_model
from .sim import TrialConfig, run_trial


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def run_checks(duration: float = 20.0, model_name: str = "two_state") -> list[CheckResult]:
    model, _ = lookup_model(model_name)
    theta = model.true_theta
    gains = Gains.scaled_identity(model.n, model.m, 10.0, 1.0, 0.1)
    cfg = TrialConfig(gains, method="integral_cl", model=model_name, delta_t=0.5,
                      duration=duration, decimation=1)
    ftc, equiv, cache = [], [], []

    def probe(ev):
        wi = ev.integrals
        if wi is not None:
            ftc.append(np.linalg.norm(wi.x_now - wi.x_lag - wi.script_Y @ theta - wi.script_U))
        if len(ev.stack):
            direct = icl_term(ev.stack, ev.theta_hat, gains)
            ideal = gains.k_cl * gains.Gamma @ ev.stack.gram @ (theta - ev.theta_hat)
            equiv.append(np.linalg.norm(direct - ideal) / (1 + np.linalg.norm(ev.theta_hat)))
            g = ev.stack.brute_gram()
            cache.append(np.max(np.abs(ev.stack.gram - g)) / max(1.0, np.max(np.abs(g))))

    res = run_trial(cfg, on_record=probe)
    dV = np.max((res.V[1:] - res.V[:-1]) / (1 + res.V[:-1]))
    lam = res.record_lambda
    out = [
        CheckResult("window identity", max(ftc) <= 1e-5, f"max residual {max(ftc):.3e} (<= 1e-5)"),
        CheckResult("learning-term equivalence", max(equiv) <= 1e-6,
                    f"max scaled gap {max(equiv):.3e} (<= 1e-6)"),
        CheckResult("gram cache", max(cache) <= 1e-10, f"max relative gap {max(cache):.3e}"),
        CheckResult("Lyapunov non-increase", dV <= 1e-9 and not res.diverged,
                    f"max dV/(1+V) {dV:.3e} (<= 1e-9)"),
        CheckResult("excitation monotone", bool(np.all(np.diff(lam) >= 0)),
                    f"final lambda_min {lam[-1]:.4g}, T_excite {res.T_excite}"),
        CheckResult("envelope", bool(res.T_excite is not None
                                     and np.all(res.eta_norm <= 1.01 * res.envelope)),
                    f"min slack {np.min(1.01 * res.envelope - res.eta_norm):.3e}"
                    if res.T_excite is not None else "excitation not reached"),
    ]
    return out
