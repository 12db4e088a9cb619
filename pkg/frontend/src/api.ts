// Thin client for the dialogtree session API. The only configuration is the
// service base URL; the fetch function is injectable so tests can supply a
// scripted transport.

export type Awaiting = "intent" | "variable" | "none";

export interface ServerMessage {
  node_id: string;
  text: string;
  suggestions: string[];
}

export interface CreateSessionResponse {
  session_id: string;
  messages: ServerMessage[];
  done: boolean;
  awaiting: Awaiting;
}

export interface MessageResponse {
  messages: ServerMessage[];
  done: boolean;
  degraded: boolean;
  awaiting: Awaiting;
}

export interface TranscriptEntry {
  author: "system" | "user";
  text: string;
  node_id?: string;
}

export interface SessionStateResponse {
  session_id: string;
  done: boolean;
  awaiting: Awaiting;
  suggestions: string[];
  transcript: TranscriptEntry[];
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class SessionApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(response.status, `HTTP ${response.status} on ${path}`);
    }
    return (await response.json()) as T;
  }

  createSession(): Promise<CreateSessionResponse> {
    return this.request<CreateSessionResponse>("/api/sessions", { method: "POST" });
  }

  sendMessage(
    sessionId: string,
    text: string,
    messageId: string,
  ): Promise<MessageResponse> {
    return this.request<MessageResponse>(`/api/sessions/${sessionId}/messages`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, message_id: messageId }),
    });
  }

  getState(sessionId: string): Promise<SessionStateResponse> {
    return this.request<SessionStateResponse>(`/api/sessions/${sessionId}`);
  }

  async endSession(sessionId: string): Promise<void> {
    await this.request<unknown>(`/api/sessions/${sessionId}`, { method: "DELETE" });
  }

  // Post-dialog rating; the endpoint is a no-op by default and a missing
  // route must never surface as an error to the user.
  async submitRating(
    sessionId: string,
    quality: number,
    length: number,
  ): Promise<void> {
    try {
      await this.request<unknown>(`/api/ratings`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ session_id: sessionId, quality, length }),
      });
    } catch {
      // ratings are best-effort
    }
  }
}
