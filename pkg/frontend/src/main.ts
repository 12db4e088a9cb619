import { SessionApi } from "./api.js";
import { ChatController } from "./controller.js";
import { mountChat } from "./ui.js";

const SESSION_KEY = "dialogtree.session";

function baseUrl(): string {
  const meta = document.querySelector<HTMLMetaElement>('meta[name="service-base-url"]');
  return (meta?.content || "").replace(/\/$/, "");
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app container");
  }
  const api = new SessionApi(baseUrl());
  const controller = new ChatController(api);
  controller.subscribe((state) => {
    if (state.sessionId) {
      window.sessionStorage.setItem(SESSION_KEY, state.sessionId);
    }
  });
  mountChat(root, controller);
  const stored = window.sessionStorage.getItem(SESSION_KEY);
  if (stored) {
    await controller.restore(stored);
  } else {
    await controller.startChat();
  }
}

void boot();
