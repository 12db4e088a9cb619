// Orchestrates the chat: one in-flight send at a time, deterministic
// per-session message ids, and state transitions the UI re-renders from.

import { ApiError, SessionApi } from "./api.js";
import {
  applyConnectionError,
  applyCreated,
  applyReply,
  applyRestored,
  applySessionEnded,
  applyUserText,
  ChatViewState,
  initialState,
} from "./state.js";

export type Listener = (state: ChatViewState) => void;

export class ChatController {
  private state: ChatViewState = initialState();
  private listeners: Listener[] = [];
  private messageCounter = 0;

  constructor(private readonly api: SessionApi) {}

  getState(): ChatViewState {
    return this.state;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.state);
  }

  private setState(next: ChatViewState): void {
    this.state = next;
    for (const listener of this.listeners) {
      listener(next);
    }
  }

  async startChat(): Promise<ChatViewState> {
    try {
      const created = await this.api.createSession();
      this.messageCounter = 0;
      this.setState(applyCreated(this.state, created));
    } catch (err) {
      this.setState(
        applyConnectionError(initialState(), describeError(err)),
      );
    }
    return this.state;
  }

  // Reload with a stored session id: the transcript comes from GET state.
  async restore(sessionId: string): Promise<ChatViewState> {
    try {
      const summary = await this.api.getState(sessionId);
      this.messageCounter = summary.transcript.filter(
        (entry) => entry.author === "user",
      ).length;
      this.setState(applyRestored(this.state, summary));
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        return this.startChat(); // stale id: begin a fresh dialog
      }
      this.setState(applyConnectionError(initialState(), describeError(err)));
    }
    return this.state;
  }

  // Clicking a suggestion calls this with the suggestion's intent text; the
  // request is exactly the one a typed message would produce.
  async send(text: string): Promise<ChatViewState> {
    const sessionId = this.state.sessionId;
    if (!sessionId || this.state.busy || this.state.done || this.state.ended) {
      return this.state;
    }
    this.messageCounter += 1;
    const messageId = `m${this.messageCounter}`;
    this.setState(applyUserText(this.state, text));
    try {
      const reply = await this.api.sendMessage(sessionId, text, messageId);
      this.setState(applyReply(this.state, reply));
    } catch (err) {
      if (err instanceof ApiError && (err.status === 404 || err.status === 409)) {
        this.setState(applySessionEnded(this.state));
      } else {
        this.setState(applyConnectionError(this.state, describeError(err)));
      }
    }
    return this.state;
  }

  async rate(quality: number, length: number): Promise<void> {
    if (this.state.sessionId) {
      await this.api.submitRating(this.state.sessionId, quality, length);
    }
  }

  async restart(): Promise<ChatViewState> {
    return this.startChat();
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError && err.status === 0) {
    return "Cannot reach the dialog service.";
  }
  return err instanceof Error ? err.message : String(err);
}
