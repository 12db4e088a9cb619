// DOM rendering: a transcript column, suggestion buttons under the latest
// system bubble, a free-text input that is always available while the dialog
// runs, and end-of-dialog affordances (restart + rating).

import { ChatController } from "./controller.js";
import { ChatViewState, inputEnabled, visibleSuggestions } from "./state.js";

export function mountChat(root: HTMLElement, controller: ChatController): void {
  root.innerHTML = `
    <div class="chat">
      <div class="banner" hidden></div>
      <div class="transcript"></div>
      <div class="suggestions"></div>
      <div class="ended-notice" hidden>
        The dialog has ended. <button class="restart">Start over</button>
      </div>
      <div class="rating" hidden>
        <span>Was your question answered?</span>
        <select class="rate-quality">
          <option value="1">1 - not at all</option>
          <option value="2">2 - partially</option>
          <option value="3">3 - mostly</option>
          <option value="4">4 - entirely</option>
        </select>
        <span>How was the length?</span>
        <select class="rate-length">
          <option value="1">1 - much too short</option>
          <option value="2">2 - a bit short</option>
          <option value="3">3 - just right</option>
          <option value="4">4 - a bit long</option>
          <option value="5">5 - much too long</option>
        </select>
        <button class="rate-submit">Send rating</button>
      </div>
      <form class="composer">
        <input type="text" class="input" placeholder="Type your question..." autocomplete="off" />
        <button type="submit" class="send">Send</button>
      </form>
    </div>`;

  const banner = root.querySelector<HTMLElement>(".banner")!;
  const transcript = root.querySelector<HTMLElement>(".transcript")!;
  const suggestions = root.querySelector<HTMLElement>(".suggestions")!;
  const endedNotice = root.querySelector<HTMLElement>(".ended-notice")!;
  const rating = root.querySelector<HTMLElement>(".rating")!;
  const form = root.querySelector<HTMLFormElement>(".composer")!;
  const input = root.querySelector<HTMLInputElement>(".input")!;
  const sendButton = root.querySelector<HTMLButtonElement>(".send")!;

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value.trim();
    if (text) {
      input.value = "";
      void controller.send(text);
    }
  });

  root.querySelector<HTMLButtonElement>(".restart")!.addEventListener("click", () => {
    void controller.restart();
  });

  root.querySelector<HTMLButtonElement>(".rate-submit")!.addEventListener("click", () => {
    const quality = Number(root.querySelector<HTMLSelectElement>(".rate-quality")!.value);
    const length = Number(root.querySelector<HTMLSelectElement>(".rate-length")!.value);
    void controller.rate(quality, length);
    rating.hidden = true;
  });

  controller.subscribe((state: ChatViewState) => {
    banner.hidden = state.error === null;
    if (state.error !== null) {
      banner.innerHTML = "";
      banner.append(document.createTextNode(state.error + " "));
      const retry = document.createElement("button");
      retry.textContent = "Retry";
      retry.addEventListener("click", () => void controller.restart());
      banner.append(retry);
    }

    transcript.innerHTML = "";
    for (const bubble of state.transcript) {
      const el = document.createElement("div");
      el.className = `bubble ${bubble.author}`;
      el.textContent = bubble.text; // server text only, rendered inert
      transcript.append(el);
    }
    transcript.scrollTop = transcript.scrollHeight;

    suggestions.innerHTML = "";
    for (const suggestion of visibleSuggestions(state)) {
      const button = document.createElement("button");
      button.className = "suggestion";
      button.textContent = suggestion;
      button.disabled = !inputEnabled(state);
      // a click sends the intent text verbatim, same as typing it
      button.addEventListener("click", () => void controller.send(suggestion));
      suggestions.append(button);
    }

    endedNotice.hidden = !state.ended;
    rating.hidden = !state.done;
    const enabled = inputEnabled(state);
    input.disabled = !enabled;
    sendButton.disabled = !enabled;
  });
}
