/**
 * Browser entry point. Configuration comes from the hosting page:
 * `window.RADSUM_API_BASE` (service base URL) and, optionally,
 * `window.RADSUM_SESSION` to join an existing session or to override the
 * parameters used when creating a new one.
 */

import { EvalApiClient } from "./api.js";
import { RaterApp } from "./app.js";

interface SessionConfig {
  sessionId?: string;
  checkpoint?: string;
  corpus?: string;
  language?: string;
  nItems?: number;
  seed?: number;
}

declare global {
  interface Window {
    RADSUM_API_BASE?: string;
    RADSUM_SESSION?: SessionConfig;
  }
}

function boot(): void {
  const root = document.getElementById("app");
  if (root === null) {
    throw new Error("missing #app root element");
  }
  const baseUrl = window.RADSUM_API_BASE ?? "http://127.0.0.1:8000";
  const session = window.RADSUM_SESSION ?? {};
  const app = new RaterApp(root, new EvalApiClient(baseUrl));
  if (session.sessionId !== undefined) {
    void app.start({ sessionId: session.sessionId });
  } else {
    void app.start({
      create: {
        checkpoint: session.checkpoint ?? "rr1000_EN_PT_GE",
        corpus: session.corpus ?? "mix",
        language: session.language ?? "en",
        nItems: session.nItems ?? 30,
        seed: session.seed ?? 0,
      },
    });
  }
}

boot();
