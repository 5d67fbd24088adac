/**
 * Controller wiring the API client, session state, and views into the
 * single-page flow: one item at a time, no back-navigation after submit,
 * one request in flight at a time.
 */

import type { CreateSessionRequest, NextResult } from "./api.js";
import { ApiError, EvalApiClient, MalformedPayload } from "./api.js";
import type { ItemViewHandle } from "./render.js";
import {
  renderError,
  renderItem,
  renderLoading,
  renderNoRatings,
  renderSummary,
} from "./render.js";
import { UiSessionState } from "./state.js";

export interface StartConfig {
  sessionId?: string;
  create?: CreateSessionRequest;
}

function describe(error: unknown): string {
  if (error instanceof MalformedPayload) {
    return `The service sent an unexpected response (${error.message}).`;
  }
  if (error instanceof Error) {
    return error.message;
  }
  return String(error);
}

export class RaterApp {
  private readonly root: HTMLElement;
  private readonly client: EvalApiClient;
  private state: UiSessionState | null = null;
  private itemHandle: ItemViewHandle | null = null;

  constructor(root: HTMLElement, client: EvalApiClient) {
    this.root = root;
    this.client = client;
  }

  async start(config: StartConfig): Promise<void> {
    renderLoading(this.root);
    if (this.state === null) {
      let sessionId = config.sessionId;
      if (sessionId === undefined) {
        if (config.create === undefined) {
          throw new Error("start needs a session id or creation parameters");
        }
        try {
          sessionId = (await this.client.createSession(config.create)).sessionId;
        } catch (error) {
          renderError(this.root, describe(error), () => void this.start(config));
          return;
        }
      }
      this.state = new UiSessionState(sessionId);
    }
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    const state = this.state;
    if (state === null) {
      return;
    }
    let result: NextResult;
    try {
      result = await this.client.nextItem(state.sessionId);
    } catch (error) {
      renderError(this.root, describe(error), () => void this.loadNext());
      return;
    }
    if (result.done) {
      await this.showSummary();
      return;
    }
    state.setItem(result.item);
    this.renderCurrent();
  }

  private renderCurrent(): void {
    const state = this.state;
    if (state === null || state.item === null) {
      return;
    }
    this.itemHandle = renderItem(this.root, state, {
      onChange: (patch) => {
        state.setDraft(patch);
        this.itemHandle?.syncSubmit(state.canSubmit());
      },
      onSubmit: () => void this.submit(),
    });
  }

  private async submit(): Promise<void> {
    const state = this.state;
    if (state === null || state.item === null) {
      return;
    }
    const itemId = state.item.itemId;
    const draft = state.beginSubmit();
    if (draft === null) {
      return;
    }
    this.renderCurrent();
    try {
      const ack = await this.client.submitRating(state.sessionId, itemId, draft);
      if (state.acknowledge(itemId, ack.progress)) {
        await this.loadNext();
      }
    } catch (error) {
      state.failSubmit(describe(error));
      this.renderCurrent();
    }
  }

  private async showSummary(): Promise<void> {
    const state = this.state;
    if (state === null) {
      return;
    }
    try {
      renderSummary(this.root, await this.client.summary(state.sessionId));
    } catch (error) {
      if (error instanceof ApiError && error.code === "NoRatings") {
        renderNoRatings(this.root);
        return;
      }
      renderError(this.root, describe(error), () => void this.showSummary());
    }
  }
}
