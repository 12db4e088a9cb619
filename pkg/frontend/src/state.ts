// View state and pure transitions. The client never invents text: every
// system bubble is a string the server sent, appended in server order.

import type {
  Awaiting,
  CreateSessionResponse,
  MessageResponse,
  SessionStateResponse,
} from "./api.js";

export interface Bubble {
  author: "system" | "user";
  text: string;
  nodeId?: string;
}

export interface ChatViewState {
  sessionId: string | null;
  transcript: Bubble[];
  suggestions: string[];
  awaiting: Awaiting;
  done: boolean;
  busy: boolean;
  error: string | null; // connection banner text
  ended: boolean; // server said the session is gone (404/409)
}

export function initialState(): ChatViewState {
  return {
    sessionId: null,
    transcript: [],
    suggestions: [],
    awaiting: "none",
    done: false,
    busy: false,
    error: null,
    ended: false,
  };
}

export function visibleSuggestions(state: ChatViewState): string[] {
  // suggestions are offered only while the dialog awaits something
  if (state.done || state.awaiting === "none") {
    return [];
  }
  return state.suggestions;
}

export function inputEnabled(state: ChatViewState): boolean {
  return !state.done && !state.busy && !state.ended && state.sessionId !== null;
}

export function applyCreated(
  state: ChatViewState,
  response: CreateSessionResponse,
): ChatViewState {
  const transcript: Bubble[] = response.messages.map((m) => ({
    author: "system",
    text: m.text,
    nodeId: m.node_id,
  }));
  const last = response.messages[response.messages.length - 1];
  return {
    ...initialState(),
    sessionId: response.session_id,
    transcript,
    suggestions: last ? last.suggestions : [],
    awaiting: response.awaiting,
    done: response.done,
  };
}

export function applyUserText(state: ChatViewState, text: string): ChatViewState {
  return {
    ...state,
    transcript: [...state.transcript, { author: "user", text }],
    busy: true,
    error: null,
  };
}

export function applyReply(
  state: ChatViewState,
  response: MessageResponse,
): ChatViewState {
  const bubbles: Bubble[] = response.messages.map((m) => ({
    author: "system",
    text: m.text,
    nodeId: m.node_id,
  }));
  const last = response.messages[response.messages.length - 1];
  return {
    ...state,
    transcript: [...state.transcript, ...bubbles],
    suggestions: last ? last.suggestions : [],
    awaiting: response.awaiting,
    done: response.done,
    busy: false,
  };
}

export function applyRestored(
  state: ChatViewState,
  response: SessionStateResponse,
): ChatViewState {
  const transcript: Bubble[] = response.transcript.map((entry) => ({
    author: entry.author,
    text: entry.text,
    nodeId: entry.node_id,
  }));
  return {
    ...initialState(),
    sessionId: response.session_id,
    transcript,
    suggestions: response.suggestions,
    awaiting: response.awaiting,
    done: response.done,
  };
}

export function applyConnectionError(
  state: ChatViewState,
  message: string,
): ChatViewState {
  return { ...state, busy: false, error: message };
}

export function applySessionEnded(state: ChatViewState): ChatViewState {
  return { ...state, busy: false, ended: true, suggestions: [] };
}
